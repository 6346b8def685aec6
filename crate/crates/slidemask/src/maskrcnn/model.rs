//! Model assembly: parameter registration for backbone + RPN + heads,
//! trainable-scope selection, and the raw detection forward pass.

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::imageops::PixelArray;
use crate::nn::{sigmoid, ParamStore};

use super::anchors::{clip_box, decode_deltas, generate_anchors, nms_sorted, BoxPx};
use super::backbone::{Backbone, BackboneCache};
use super::heads::{box_head_forward, register_box_head, register_mask_head};
use super::roi_align::{roi_align, NormBox};
use super::rpn;
use super::{TrainConfig, TrainableScope};

pub struct ModelHandle {
    pub config: TrainConfig,
    pub backbone: Backbone,
    pub store: ParamStore,
}

/// One raw detection at network-input resolution.
#[derive(Debug, Clone)]
pub struct RawDetection {
    /// Foreground class index, 1..=K.
    pub label_index: usize,
    pub score: f32,
    /// (y1, x1, y2, x2) in input pixels.
    pub bbox: BoxPx,
    /// Full-frame mask probabilities at input resolution.
    pub mask: Array2<f32>,
}

pub fn build_model(config: &TrainConfig) -> Result<ModelHandle> {
    config.validate()?;
    let backbone = Backbone::new(config.backbone, config.extras.base_width);
    let mut store = ParamStore::new(config.seed);
    backbone.register(&mut store);
    let c = backbone.out_channels();
    let ex = &config.extras;
    let num_anchors = ex.anchor_scales.len() * ex.anchor_ratios.len();
    rpn::register(&mut store, c, ex.head_hidden, num_anchors);
    register_box_head(
        &mut store,
        c * ex.roi_pool_size * ex.roi_pool_size,
        ex.head_hidden,
        config.num_foreground_classes + 1,
    );
    register_mask_head(&mut store, c, ex.mask_channels, config.num_foreground_classes);
    let mut model = ModelHandle {
        config: config.clone(),
        backbone,
        store,
    };
    model.apply_scope();
    Ok(model)
}

impl ModelHandle {
    pub fn num_anchors_per_cell(&self) -> usize {
        self.config.extras.anchor_scales.len() * self.config.extras.anchor_ratios.len()
    }

    /// Set trainability from the configured scope. Head parameters are
    /// always trainable; batch-norm affines never are; backbone convs
    /// follow the scope.
    pub fn apply_scope(&mut self) {
        let scope = self.config.trainable_scope;
        for name in self.store.names() {
            if name.ends_with(".scale") || name.ends_with(".shift") {
                self.store.set_trainable(&name, false);
            } else if name.starts_with("backbone.") {
                let on = match scope {
                    TrainableScope::HeadsOnly => false,
                    TrainableScope::HeadsAndStage5 => name.starts_with("backbone.stage5."),
                    TrainableScope::All => true,
                };
                self.store.set_trainable(&name, on);
            } else {
                self.store.set_trainable(&name, true);
            }
        }
    }

    /// Whether any backbone tensor receives gradients under the current
    /// scope.
    pub fn backbone_trainable(&self) -> bool {
        self.store
            .names()
            .iter()
            .any(|n| n.starts_with("backbone.") && self.store.is_trainable(n))
    }

    /// (H, W, 3) pixels in 0..255 to the normalized (3, S, S) network input.
    pub fn normalize(&self, image: &PixelArray) -> Array3<f32> {
        let (h, w, _) = image.dim();
        Array3::from_shape_fn((3, h, w), |(c, y, x)| image[[y, x, c]] / 127.5 - 1.0)
    }

    pub fn forward_features(&self, x: &Array3<f32>) -> (Array3<f32>, BackboneCache) {
        self.backbone.forward(&self.store, x)
    }

    pub fn anchors_for(&self, feat_h: usize, feat_w: usize) -> Vec<BoxPx> {
        generate_anchors(
            feat_h,
            feat_w,
            self.config.backbone.feature_stride(),
            &self.config.extras.anchor_scales,
            &self.config.extras.anchor_ratios,
        )
    }

    /// Pixel box to the normalized box used by RoI Align, clamped inside
    /// the frame and guaranteed non-degenerate.
    pub fn norm_box(&self, b: &BoxPx) -> NormBox {
        let s = self.config.extras.image_size as f64;
        let y1 = (b[0] as f64 / s).clamp(0.0, 1.0);
        let x1 = (b[1] as f64 / s).clamp(0.0, 1.0);
        let mut y2 = (b[2] as f64 / s).clamp(0.0, 1.0);
        let mut x2 = (b[3] as f64 / s).clamp(0.0, 1.0);
        let eps = 1.0 / (2.0 * s);
        if y2 - y1 < eps {
            y2 = (y1 + eps).min(1.0);
        }
        if x2 - x1 < eps {
            x2 = (x1 + eps).min(1.0);
        }
        [y1.min(1.0 - eps), x1.min(1.0 - eps), y2, x2]
    }

    /// RoI-align a batch of pixel boxes and flatten to (N, C*p*p) rows for
    /// the box head.
    pub fn pool_rois(&self, feat: &Array3<f32>, boxes: &[BoxPx]) -> Result<Array2<f32>> {
        let p = self.config.extras.roi_pool_size;
        let c = feat.dim().0;
        let mut out = Array2::<f32>::zeros((boxes.len(), c * p * p));
        for (n, b) in boxes.iter().enumerate() {
            let pooled = roi_align(feat, &self.norm_box(b), (p, p), self.config.extras.samples_per_bin)?;
            for (dst, src) in out.row_mut(n).iter_mut().zip(pooled.iter()) {
                *dst = *src;
            }
        }
        Ok(out)
    }

    /// Full inference pass: proposals -> box head -> per-class NMS ->
    /// mask head. `score_threshold` filters final detections.
    pub fn raw_detect(&self, image: &PixelArray, score_threshold: f32) -> Result<Vec<RawDetection>> {
        let ex = &self.config.extras;
        let size = ex.image_size;
        let x = self.normalize(image);
        let (feat, _) = self.forward_features(&x);
        let (_, fh, fw) = feat.dim();
        let (rpn_out, _) = rpn::forward(&self.store, &feat);
        let anchors = self.anchors_for(fh, fw);
        let props = rpn::proposals(
            &rpn_out,
            &anchors,
            self.num_anchors_per_cell(),
            size,
            ex.rpn_objectness_threshold as f32,
            ex.rpn_pre_nms_top_n,
            ex.rpn_nms_iou as f32,
            ex.rpn_post_nms_infer,
        );
        if props.is_empty() {
            return Ok(Vec::new());
        }
        let boxes: Vec<BoxPx> = props.iter().map(|(b, _)| *b).collect();
        let pooled = self.pool_rois(&feat, &boxes)?;
        let (head_out, _) = box_head_forward(&self.store, &pooled);
        let k_classes = self.config.num_foreground_classes;
        // Candidates: best foreground class per RoI with refined box.
        struct Candidate {
            label: usize,
            score: f32,
            bbox: BoxPx,
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for (n, b) in boxes.iter().enumerate() {
            let logits = head_out.cls.row(n);
            let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
            let denom: f32 = exps.iter().sum();
            let (mut best_k, mut best_p) = (0usize, 0.0f32);
            for (k, &e) in exps.iter().enumerate().take(k_classes + 1).skip(1) {
                let p = e / denom;
                if p > best_p {
                    best_p = p;
                    best_k = k;
                }
            }
            if best_k == 0 || best_p < score_threshold {
                continue;
            }
            let d = [
                head_out.bbox[[n, 4 * best_k]],
                head_out.bbox[[n, 4 * best_k + 1]],
                head_out.bbox[[n, 4 * best_k + 2]],
                head_out.bbox[[n, 4 * best_k + 3]],
            ];
            let refined = clip_box(&decode_deltas(b, &d), size as f32);
            if refined[2] - refined[0] < 1.0 || refined[3] - refined[1] < 1.0 {
                continue;
            }
            candidates.push(Candidate {
                label: best_k,
                score: best_p,
                bbox: refined,
            });
        }
        candidates.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        // Per-class NMS.
        let mut kept: Vec<&Candidate> = Vec::new();
        for k in 1..=k_classes {
            let class: Vec<&Candidate> = candidates.iter().filter(|c| c.label == k).collect();
            let cls_boxes: Vec<BoxPx> = class.iter().map(|c| c.bbox).collect();
            for idx in nms_sorted(&cls_boxes, ex.detection_nms_iou as f32) {
                kept.push(class[idx]);
            }
        }
        kept.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        // Mask head on the refined boxes.
        let mut detections = Vec::with_capacity(kept.len());
        for c in kept {
            let pooled = roi_align(
                &feat,
                &self.norm_box(&c.bbox),
                (ex.mask_pool_size, ex.mask_pool_size),
                ex.samples_per_bin,
            )?;
            let (logits, _) = super::heads::mask_head_forward(&self.store, &pooled);
            let mask = paste_mask(&logits, c.label - 1, &c.bbox, size);
            detections.push(RawDetection {
                label_index: c.label,
                score: c.score,
                bbox: c.bbox,
                mask,
            });
        }
        Ok(detections)
    }
}

/// Bilinearly upsample one class channel of the mask logits into the box
/// region of a full-frame probability map.
fn paste_mask(logits: &Array3<f32>, channel: usize, bbox: &BoxPx, size: usize) -> Array2<f32> {
    let (_, mh, mw) = logits.dim();
    let mut out = Array2::<f32>::zeros((size, size));
    let y1 = bbox[0].max(0.0);
    let x1 = bbox[1].max(0.0);
    let y2 = bbox[2].min(size as f32);
    let x2 = bbox[3].min(size as f32);
    let bh = (y2 - y1).max(1e-3);
    let bw = (x2 - x1).max(1e-3);
    for y in y1.floor() as usize..(y2.ceil() as usize).min(size) {
        for x in x1.floor() as usize..(x2.ceil() as usize).min(size) {
            // Pixel center mapped into the mh x mw logit grid.
            let my = ((y as f32 + 0.5 - y1) / bh * mh as f32 - 0.5).clamp(0.0, (mh - 1) as f32);
            let mx = ((x as f32 + 0.5 - x1) / bw * mw as f32 - 0.5).clamp(0.0, (mw - 1) as f32);
            let y0 = my.floor() as usize;
            let x0 = mx.floor() as usize;
            let y1i = (y0 + 1).min(mh - 1);
            let x1i = (x0 + 1).min(mw - 1);
            let fy = my - y0 as f32;
            let fx = mx - x0 as f32;
            let v = logits[[channel, y0, x0]] * (1.0 - fy) * (1.0 - fx)
                + logits[[channel, y0, x1i]] * (1.0 - fy) * fx
                + logits[[channel, y1i, x0]] * fy * (1.0 - fx)
                + logits[[channel, y1i, x1i]] * fy * fx;
            out[[y, x]] = sigmoid(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskrcnn::{BackboneDepth, BackboneKind};

    fn tiny_config() -> TrainConfig {
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
        cfg
    }

    #[test]
    fn heads_only_scope_freezes_the_backbone() {
        let model = build_model(&tiny_config()).unwrap();
        for name in model.store.names() {
            let expected = !name.starts_with("backbone.") && !name.ends_with(".scale") && !name.ends_with(".shift");
            assert_eq!(model.store.is_trainable(&name), expected, "{name}");
        }
        assert!(!model.backbone_trainable());
    }

    #[test]
    fn all_scope_trains_convs_but_not_bn() {
        let mut cfg = tiny_config();
        cfg.trainable_scope = TrainableScope::All;
        let model = build_model(&cfg).unwrap();
        assert!(model.store.is_trainable("backbone.stem.conv.w"));
        assert!(!model.store.is_trainable("backbone.stem.bn.scale"));
        assert!(model.backbone_trainable());
    }

    #[test]
    fn normalize_maps_pixel_range_to_unit_interval() {
        let model = build_model(&tiny_config()).unwrap();
        let mut img = PixelArray::zeros((64, 64, 3));
        img[[0, 0, 0]] = 255.0;
        img[[0, 0, 1]] = 127.5;
        let x = model.normalize(&img);
        assert!((x[[0, 0, 0]] - 1.0).abs() < 1e-6);
        assert!(x[[1, 0, 0]].abs() < 1e-6);
        assert!((x[[2, 0, 0]] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn raw_detect_runs_end_to_end() {
        let model = build_model(&tiny_config()).unwrap();
        let img = PixelArray::from_shape_fn((64, 64, 3), |(y, x, c)| ((y * 3 + x * 7 + c * 11) % 256) as f32);
        let dets = model.raw_detect(&img, 0.0).unwrap();
        for d in &dets {
            assert!((1..=4).contains(&d.label_index));
            assert!((0.0..=1.0).contains(&d.score));
            assert_eq!(d.mask.dim(), (64, 64));
            assert!(d.mask.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn norm_box_never_degenerates() {
        let model = build_model(&tiny_config()).unwrap();
        let nb = model.norm_box(&[10.0, 10.0, 10.0, 10.0]);
        assert!(nb[2] > nb[0] && nb[3] > nb[1]);
        let nb2 = model.norm_box(&[-5.0, -5.0, 200.0, 200.0]);
        assert!(nb2.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
