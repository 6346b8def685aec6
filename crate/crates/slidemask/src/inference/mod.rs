//! Thresholded detection, image-level verdicts, detection dumps, and
//! overlay rendering.

mod detect;
mod overlay;

pub use detect::detect;
pub use overlay::render_overlay;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::Mask;
use crate::taxonomy::ClassLabel;

/// One predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// (y1, x1, y2, x2) in image pixels.
    pub bbox: (f32, f32, f32, f32),
    /// Binary mask at image resolution.
    pub mask: Mask,
    pub label: ClassLabel,
    pub score: f32,
}

impl Detection {
    pub fn bbox_area(&self) -> f32 {
        let (y1, x1, y2, x2) = self.bbox;
        (y2 - y1).max(0.0) * (x2 - x1).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    #[serde(rename = "landslide")]
    Landslide,
    #[serde(rename = "non-landslide")]
    NonLandslide,
}

impl std::fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictKind::Landslide => "landslide",
            VerdictKind::NonLandslide => "non-landslide",
        })
    }
}

/// Binary verdict for one image plus the surviving detections.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVerdict {
    pub image_id: String,
    pub verdict: VerdictKind,
    /// Highest Landslide-class score among surviving detections, 0 if none.
    pub top_score: f32,
    pub detections: Vec<Detection>,
}

/// Stable detection order: score desc, then bbox area desc, then label name.
pub fn sort_detections(detections: &mut [Detection]) {
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(b.bbox_area().partial_cmp(&a.bbox_area()).unwrap())
            .then(a.label.name().cmp(b.label.name()))
    });
}

/// Derive the image-level verdict: landslide iff a Landslide-class detection
/// with score >= threshold exists. The threshold filter is applied here
/// idempotently, so raw and pre-filtered lists give the same answer.
pub fn classify_image(image_id: &str, detections: &[Detection], threshold: f32) -> ImageVerdict {
    let mut surviving: Vec<Detection> = detections.iter().filter(|d| d.score >= threshold).cloned().collect();
    sort_detections(&mut surviving);
    let top_score = surviving
        .iter()
        .filter(|d| d.label == ClassLabel::Landslide)
        .map(|d| d.score)
        .fold(0.0f32, f32::max);
    let verdict = if top_score > 0.0 {
        VerdictKind::Landslide
    } else {
        VerdictKind::NonLandslide
    };
    ImageVerdict {
        image_id: image_id.to_string(),
        verdict,
        top_score,
        detections: surviving,
    }
}

// --- detection dump (one JSON document per image) ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionDump {
    pub image_id: String,
    pub verdict: VerdictKind,
    pub top_score: f32,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub bbox: (f32, f32, f32, f32),
    pub label: ClassLabel,
    pub score: f32,
    pub mask_height: usize,
    pub mask_width: usize,
    /// Row-major alternating run lengths, starting with a zero run.
    pub mask_rle: Vec<u32>,
}

/// Row-major RLE with alternating runs, first run counts zeros.
pub fn rle_encode(mask: &Mask) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut count = 0u32;
    for &v in mask.iter() {
        let bit = u8::from(v != 0);
        if bit == current {
            count += 1;
        } else {
            runs.push(count);
            current = bit;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

pub fn rle_decode(runs: &[u32], height: usize, width: usize) -> Result<Mask> {
    let total: u32 = runs.iter().sum();
    if total as usize != height * width {
        return Err(Error::ManifestSchema(format!(
            "mask RLE covers {total} pixels but the mask is {height}x{width}"
        )));
    }
    let mut flat = Vec::with_capacity(height * width);
    let mut bit = 0u8;
    for &run in runs {
        flat.extend(std::iter::repeat_n(bit, run as usize));
        bit ^= 1;
    }
    Ok(Array2::from_shape_vec((height, width), flat).expect("length checked"))
}

impl From<&ImageVerdict> for DetectionDump {
    fn from(v: &ImageVerdict) -> Self {
        DetectionDump {
            image_id: v.image_id.clone(),
            verdict: v.verdict,
            top_score: v.top_score,
            detections: v
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    bbox: d.bbox,
                    label: d.label,
                    score: d.score,
                    mask_height: d.mask.dim().0,
                    mask_width: d.mask.dim().1,
                    mask_rle: rle_encode(&d.mask),
                })
                .collect(),
        }
    }
}

impl DetectionDump {
    pub fn into_verdict(self) -> Result<ImageVerdict> {
        let detections = self
            .detections
            .into_iter()
            .map(|r| {
                Ok(Detection {
                    bbox: r.bbox,
                    mask: rle_decode(&r.mask_rle, r.mask_height, r.mask_width)?,
                    label: r.label,
                    score: r.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageVerdict {
            image_id: self.image_id,
            verdict: self.verdict,
            top_score: self.top_score,
            detections,
        })
    }
}

/// Write one `<image_id>.json` dump per verdict under `dir`.
pub fn write_verdicts(verdicts: &[ImageVerdict], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for v in verdicts {
        let dump = DetectionDump::from(v);
        let name: String = v
            .image_id
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = dir.join(format!("{name}.json"));
        let text = serde_json::to_string(&dump).map_err(|e| Error::json("serializing verdict", e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

/// Read verdict dumps from a directory of `*.json` files (sorted by name)
/// or from a single JSON file holding one dump or an array of dumps.
pub fn read_verdicts(path: &Path) -> Result<Vec<ImageVerdict>> {
    let mut dumps: Vec<DetectionDump> = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
            .collect();
        files.sort();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| Error::io(format!("reading {}", f.display()), e))?;
            dumps.push(serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", f.display()), e))?);
        }
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        match serde_json::from_str::<Vec<DetectionDump>>(&text) {
            Ok(list) => dumps = list,
            Err(_) => dumps.push(
                serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?,
            ),
        }
    }
    dumps.into_iter().map(DetectionDump::into_verdict).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn det(label: ClassLabel, score: f32) -> Detection {
        let mut mask = Array2::<u8>::zeros((8, 8));
        mask[[2, 2]] = 1;
        Detection {
            bbox: (1.0, 1.0, 4.0, 4.0),
            mask,
            label,
            score,
        }
    }

    #[test]
    fn empty_detections_are_non_landslide() {
        let v = classify_image("a", &[], 0.8);
        assert_eq!(v.verdict, VerdictKind::NonLandslide);
        assert_eq!(v.top_score, 0.0);
    }

    #[test]
    fn high_scoring_vegetation_is_still_non_landslide() {
        let v = classify_image("a", &[det(ClassLabel::Vegetation, 0.99)], 0.8);
        assert_eq!(v.verdict, VerdictKind::NonLandslide);
        assert_eq!(v.top_score, 0.0);
    }

    #[test]
    fn landslide_wins_and_top_score_is_class_specific() {
        let dets = vec![det(ClassLabel::Landslide, 0.85), det(ClassLabel::Building, 0.9)];
        let v = classify_image("a", &dets, 0.8);
        assert_eq!(v.verdict, VerdictKind::Landslide);
        assert!((v.top_score - 0.85).abs() < 1e-6);
    }

    #[test]
    fn classification_is_idempotent_and_order_invariant() {
        let dets = vec![
            det(ClassLabel::Building, 0.9),
            det(ClassLabel::Landslide, 0.85),
            det(ClassLabel::Vegetation, 0.81),
        ];
        let first = classify_image("a", &dets, 0.8);
        let again = classify_image("a", &first.detections, 0.8);
        assert_eq!(first, again);

        let mut reversed = dets.clone();
        reversed.reverse();
        let v2 = classify_image("a", &reversed, 0.8);
        assert_eq!(first.verdict, v2.verdict);
        assert_eq!(first.top_score, v2.top_score);
    }

    #[test]
    fn rle_round_trips() {
        let mut mask = Array2::<u8>::zeros((6, 5));
        mask[[0, 0]] = 1;
        mask[[3, 2]] = 1;
        mask[[3, 3]] = 1;
        mask[[5, 4]] = 1;
        let runs = rle_encode(&mask);
        assert_eq!(rle_decode(&runs, 6, 5).unwrap(), mask);
    }

    #[test]
    fn rle_length_mismatch_is_rejected() {
        assert!(rle_decode(&[3, 2], 4, 4).is_err());
    }

    #[test]
    fn verdict_dumps_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let verdicts = vec![
            classify_image("a.png", &[det(ClassLabel::Landslide, 0.9)], 0.8),
            classify_image("b.png", &[], 0.8),
        ];
        write_verdicts(&verdicts, dir.path()).unwrap();
        let back = read_verdicts(dir.path()).unwrap();
        assert_eq!(back, verdicts);
    }
}
