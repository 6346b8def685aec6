//! Image-level confusion counts and the derived Precision / Recall / F1 /
//! Accuracy measures, plus per-class and random-frame report tables.
//!
//! Landslide is the positive class. Measures with a zero denominator are
//! surfaced as `Measure::Undefined` and printed as "—", never coerced to 0.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{ImageVerdict, VerdictKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts as seen with non-landslide as the positive class.
    pub fn label_swapped(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

/// A measure that may be undefined (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Measure {
    Value(f64),
    Undefined,
}

impl Measure {
    fn ratio(num: usize, den: usize) -> Measure {
        if den == 0 {
            Measure::Undefined
        } else {
            Measure::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(v),
            Measure::Undefined => None,
        }
    }

    /// Rounded to 2 decimal places, half-up, for table display.
    pub fn rounded2(self) -> Option<f64> {
        self.value().map(round2)
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Value(v) => write!(f, "{:.2}", round2(*v)),
            Measure::Undefined => f.write_str("—"),
        }
    }
}

/// Half-up rounding to 2 decimal places.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn precision(c: &ConfusionCounts) -> Measure {
    Measure::ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> Measure {
    Measure::ratio(c.tp, c.tp + c.fn_)
}

pub fn f1_from(p: f64, r: f64) -> Measure {
    if p + r == 0.0 {
        Measure::Undefined
    } else {
        Measure::Value(2.0 * p * r / (p + r))
    }
}

pub fn f1(c: &ConfusionCounts) -> Measure {
    match (precision(c).value(), recall(c).value()) {
        (Some(p), Some(r)) => f1_from(p, r),
        _ => Measure::Undefined,
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Measure {
    Measure::ratio(c.tp + c.tn, c.total())
}

/// Tally the 2x2 contingency of verdicts against ground truth.
pub fn confusion(verdicts: &[ImageVerdict], truth: &BTreeMap<String, VerdictKind>) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::new(0, 0, 0, 0);
    for v in verdicts {
        let actual = truth
            .get(&v.image_id)
            .ok_or_else(|| Error::MissingTruth(v.image_id.clone()))?;
        match (v.verdict, actual) {
            (VerdictKind::Landslide, VerdictKind::Landslide) => c.tp += 1,
            (VerdictKind::Landslide, VerdictKind::NonLandslide) => c.fp += 1,
            (VerdictKind::NonLandslide, VerdictKind::Landslide) => c.fn_ += 1,
            (VerdictKind::NonLandslide, VerdictKind::NonLandslide) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReportRow {
    pub kind: VerdictKind,
    pub precision: Measure,
    pub recall: Measure,
    pub f1: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub model_name: String,
    pub dataset_name: String,
    pub counts: ConfusionCounts,
    pub accuracy: Measure,
    pub rows: [ClassReportRow; 2],
}

/// Per-class precision/recall/F1: the landslide row from the counts as-is,
/// the non-landslide row from the label-swapped counts.
pub fn class_report_from_counts(model_name: &str, dataset_name: &str, counts: ConfusionCounts) -> ClassReport {
    let row = |kind, c: &ConfusionCounts| ClassReportRow {
        kind,
        precision: precision(c),
        recall: recall(c),
        f1: f1(c),
    };
    let swapped = counts.label_swapped();
    ClassReport {
        model_name: model_name.to_string(),
        dataset_name: dataset_name.to_string(),
        counts,
        accuracy: accuracy(&counts),
        rows: [
            row(VerdictKind::Landslide, &counts),
            row(VerdictKind::NonLandslide, &swapped),
        ],
    }
}

pub fn class_report(
    model_name: &str,
    dataset_name: &str,
    verdicts: &[ImageVerdict],
    truth: &BTreeMap<String, VerdictKind>,
) -> Result<ClassReport> {
    Ok(class_report_from_counts(model_name, dataset_name, confusion(verdicts, truth)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    TN,
    FP,
    FN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAccuracyRecord {
    pub frame_index: usize,
    /// Top detection confidence as a percent; 0 for frames with no
    /// surviving detections.
    pub detection_accuracy_percent: f64,
    pub outcome: Outcome,
}

/// Sample k frames (seeded, without replacement) and report the top
/// detection confidence plus the TP/TN/FP/FN outcome tag.
pub fn frame_table(
    verdicts: &[ImageVerdict],
    truth: &BTreeMap<String, VerdictKind>,
    k: usize,
    seed: u64,
) -> Result<Vec<FrameAccuracyRecord>> {
    if k > verdicts.len() {
        return Err(Error::Contract(format!(
            "cannot sample {k} frames from {} verdicts",
            verdicts.len()
        )));
    }
    let mut indices: Vec<usize> = (0..verdicts.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(k);
    indices.sort_unstable();

    let mut rows = Vec::with_capacity(k);
    for (frame_index, &i) in indices.iter().enumerate() {
        let v = &verdicts[i];
        let actual = truth
            .get(&v.image_id)
            .ok_or_else(|| Error::MissingTruth(v.image_id.clone()))?;
        let outcome = match (v.verdict, actual) {
            (VerdictKind::Landslide, VerdictKind::Landslide) => Outcome::TP,
            (VerdictKind::Landslide, VerdictKind::NonLandslide) => Outcome::FP,
            (VerdictKind::NonLandslide, VerdictKind::Landslide) => Outcome::FN,
            (VerdictKind::NonLandslide, VerdictKind::NonLandslide) => Outcome::TN,
        };
        let confidence = v.detections.iter().map(|d| d.score).fold(0.0f32, f32::max);
        rows.push(FrameAccuracyRecord {
            frame_index: frame_index + 1,
            detection_accuracy_percent: round2(confidence as f64 * 100.0),
            outcome,
        });
    }
    Ok(rows)
}

/// Aligned-table rendering of a class report, including the raw counts.
pub fn render_class_report(report: &ClassReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Precision, Recall & F1 score — model {}, dataset {}\n",
        report.model_name, report.dataset_name
    ));
    out.push_str(&format!(
        "counts: TP={} FP={} FN={} TN={} (total {})\n",
        report.counts.tp,
        report.counts.fp,
        report.counts.fn_,
        report.counts.tn,
        report.counts.total()
    ));
    out.push_str(&format!("accuracy: {}\n", report.accuracy));
    out.push_str(&format!("{:<16}{:>6}{:>6}{:>10}\n", "Type", "P", "R", "F1 Score"));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<16}{:>6}{:>6}{:>10}\n",
            row.kind.to_string(),
            row.precision.to_string(),
            row.recall.to_string(),
            row.f1.to_string()
        ));
    }
    out
}

pub fn render_frame_table(model_name: &str, rows: &[FrameAccuracyRecord]) -> String {
    let mut out = format!("Random frames accuracy output — model {model_name}\n");
    out.push_str(&format!("{:<8}{:>24}{:>10}\n", "Frame", "Detection Accuracy (%)", "Outcome"));
    for r in rows {
        out.push_str(&format!(
            "{:<8}{:>24.2}{:>10}\n",
            r.frame_index,
            r.detection_accuracy_percent,
            format!("{:?}", r.outcome)
        ));
    }
    out
}

#[cfg(test)]
impl Measure {
    fn ratio_public(num: usize, den: usize) -> Measure {
        Measure::ratio(num, den)
    }
}
