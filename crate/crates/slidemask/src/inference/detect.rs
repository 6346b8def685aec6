//! Model-backed detection: resize to the network input, run the raw
//! forward pass, binarize masks at 0.5, and map results back to the
//! original image resolution.

use crate::error::Result;
use crate::imageops::{resize_bilinear, resize_nearest_mask, Mask, PixelArray};
use crate::maskrcnn::model::ModelHandle;
use crate::taxonomy::ClassLabel;

use super::{sort_detections, Detection};

/// Run detection on an image of any resolution. Detections come back at the
/// image's own resolution with scores >= `threshold`, sorted by descending
/// score.
pub fn detect(model: &ModelHandle, image: &PixelArray, threshold: f32) -> Result<Vec<Detection>> {
    let (h, w, _) = image.dim();
    let size = model.config.extras.image_size;
    let net_input = if (h, w) == (size, size) {
        image.clone()
    } else {
        resize_bilinear(image, size, size)
    };
    let raw = model.raw_detect(&net_input, threshold)?;
    let sy = h as f32 / size as f32;
    let sx = w as f32 / size as f32;
    let mut detections = Vec::with_capacity(raw.len());
    for r in raw {
        let label = match ClassLabel::from_head_index(r.label_index) {
            Some(l) => l,
            None => continue,
        };
        // Binarize at 0.5, then bring the mask to image resolution.
        let mut net_mask = Mask::zeros((size, size));
        for (dst, &p) in net_mask.iter_mut().zip(r.mask.iter()) {
            *dst = u8::from(p >= 0.5);
        }
        let mask = if (h, w) == (size, size) {
            net_mask
        } else {
            resize_nearest_mask(&net_mask, h, w)
        };
        detections.push(Detection {
            bbox: (
                (r.bbox[0] * sy).clamp(0.0, h as f32),
                (r.bbox[1] * sx).clamp(0.0, w as f32),
                (r.bbox[2] * sy).clamp(0.0, h as f32),
                (r.bbox[3] * sx).clamp(0.0, w as f32),
            ),
            mask,
            label,
            score: r.score,
        });
    }
    sort_detections(&mut detections);
    Ok(detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskrcnn::model::build_model;
    use crate::maskrcnn::{BackboneDepth, BackboneKind, TrainConfig};

    fn tiny_model() -> ModelHandle {
        let mut cfg = TrainConfig {
            backbone: BackboneKind::new(BackboneDepth::ResNet50),
            ..TrainConfig::default()
        };
        cfg.extras.image_size = 64;
        cfg.extras.base_width = 4;
        cfg.extras.head_hidden = 16;
        cfg.extras.mask_channels = 8;
        cfg.extras.anchor_scales = vec![16.0, 32.0];
        cfg.extras.anchor_ratios = vec![1.0];
        build_model(&cfg).unwrap()
    }

    fn test_image(h: usize, w: usize) -> PixelArray {
        PixelArray::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 5 + x * 3 + c * 17) % 256) as f32)
    }

    #[test]
    fn threshold_above_one_yields_nothing() {
        let model = tiny_model();
        let dets = detect(&model, &test_image(64, 64), 1.01).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn filtering_is_monotone_in_the_threshold() {
        let model = tiny_model();
        let img = test_image(64, 64);
        let low = detect(&model, &img, 0.0).unwrap();
        let high = detect(&model, &img, 0.5).unwrap();
        assert!(high.len() <= low.len());
        for d in &high {
            assert!(low.iter().any(|l| l.bbox == d.bbox && l.label == d.label && l.score == d.score));
        }
    }

    #[test]
    fn detections_come_back_at_image_resolution() {
        let model = tiny_model();
        let img = test_image(128, 96);
        let dets = detect(&model, &img, 0.0).unwrap();
        for d in &dets {
            assert_eq!(d.mask.dim(), (128, 96));
            let (y1, x1, y2, x2) = d.bbox;
            assert!(y1 >= 0.0 && x1 >= 0.0 && y2 <= 128.0 && x2 <= 96.0);
        }
    }

    #[test]
    fn results_are_sorted_by_descending_score() {
        let model = tiny_model();
        let dets = detect(&model, &test_image(64, 64), 0.0).unwrap();
        for w in dets.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
}
