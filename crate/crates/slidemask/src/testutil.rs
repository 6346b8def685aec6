//! Helpers for constructing synthetic verdict sets from target confusion
//! counts. Used by the test suites and by the bundled evaluation fixtures.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::inference::{Detection, ImageVerdict, VerdictKind};
use crate::metrics::ConfusionCounts;
use crate::taxonomy::ClassLabel;

fn landslide_detection(score: f32) -> Detection {
    let mut mask = Array2::<u8>::zeros((16, 16));
    for y in 4..12 {
        for x in 4..12 {
            mask[[y, x]] = 1;
        }
    }
    Detection {
        bbox: (4.0, 4.0, 12.0, 12.0),
        mask,
        label: ClassLabel::Landslide,
        score,
    }
}

/// Build a verdict list and matching ground truth that tally to exactly the
/// given confusion counts (landslide positive).
pub fn verdicts_from_counts(counts: ConfusionCounts) -> (Vec<ImageVerdict>, BTreeMap<String, VerdictKind>) {
    let mut verdicts = Vec::new();
    let mut truth = BTreeMap::new();
    let mut n = 0usize;
    let mut push = |predicted: VerdictKind, actual: VerdictKind, n: &mut usize| {
        let image_id = format!("frame{:03}", *n);
        *n += 1;
        let (detections, top_score) = if predicted == VerdictKind::Landslide {
            let score = 0.85 + 0.1 * ((*n % 10) as f32 / 10.0);
            (vec![landslide_detection(score)], score)
        } else {
            (Vec::new(), 0.0)
        };
        truth.insert(image_id.clone(), actual);
        verdicts.push(ImageVerdict {
            image_id,
            verdict: predicted,
            top_score,
            detections,
        });
    };
    for _ in 0..counts.tp {
        push(VerdictKind::Landslide, VerdictKind::Landslide, &mut n);
    }
    for _ in 0..counts.fp {
        push(VerdictKind::Landslide, VerdictKind::NonLandslide, &mut n);
    }
    for _ in 0..counts.fn_ {
        push(VerdictKind::NonLandslide, VerdictKind::Landslide, &mut n);
    }
    for _ in 0..counts.tn {
        push(VerdictKind::NonLandslide, VerdictKind::NonLandslide, &mut n);
    }
    (verdicts, truth)
}
