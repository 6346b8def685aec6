//! The training loop: per-image multi-task loss (RPN objectness + RPN box,
//! RoI class + box + mask), manual backprop through the heads (and into the
//! backbone when the scope unfreezes it), SGD with momentum, and per-epoch
//! loss records.
//!
//! With a frozen backbone and static inputs the backbone features are
//! computed once per image and cached across epochs.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::augment_pair;
use crate::error::{Error, Result};
use crate::imageops::{Mask, PixelArray};
use crate::nn::{
    bce_with_logits_mean, clip_grad_norm, name_hash, smooth_l1_mean, softmax_cross_entropy,
};

use super::anchors::BoxPx;
use super::heads::{box_head_backward, box_head_forward, mask_head_backward, mask_head_forward};
use super::model::ModelHandle;
use super::roi_align::{roi_align, roi_align_backward};
use super::rpn;
use super::targets::{mask_target, roi_targets, rpn_targets, GtInstance};

/// One training image with its instances, already at network-input
/// resolution.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    /// (S, S, 3) pixels in 0..255.
    pub image: PixelArray,
    pub instances: Vec<GtInstance>,
}

/// Tight pixel bounding box of a binary mask, or None when empty.
pub fn bbox_from_mask(mask: &Mask) -> Option<BoxPx> {
    let (h, w) = mask.dim();
    let (mut y1, mut x1, mut y2, mut x2) = (h, w, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] > 0 {
                y1 = y1.min(y);
                x1 = x1.min(x);
                y2 = y2.max(y);
                x2 = x2.max(x);
            }
        }
    }
    if y1 > y2 {
        return None;
    }
    Some([y1 as f32, x1 as f32, (y2 + 1) as f32, (x2 + 1) as f32])
}

/// Build a sample from labeled masks; instances with empty masks are
/// dropped.
pub fn sample_from_masks(id: &str, image: PixelArray, labeled: Vec<(usize, Mask)>) -> TrainSample {
    let instances = labeled
        .into_iter()
        .filter_map(|(label_index, mask)| {
            bbox_from_mask(&mask).map(|bbox| GtInstance {
                label_index,
                bbox,
                mask,
            })
        })
        .collect();
    TrainSample {
        id: id.to_string(),
        image,
        instances,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLossRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-image loss components: rpn_class, rpn_bbox, class, bbox,
    /// mask.
    pub components: BTreeMap<String, f64>,
    /// Sum of the components.
    pub total: f64,
    /// Mean total loss over the validation split (equals `total` when no
    /// validation samples were given).
    pub validation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLossRecord>,
    /// 1-based epoch with the lowest validation loss; the model handle is
    /// left holding that epoch's weights.
    pub best_epoch: usize,
}

const COMPONENT_NAMES: [&str; 5] = ["rpn_class", "rpn_bbox", "class", "bbox", "mask"];

/// Train the heads (and any unfrozen backbone stages) on the given samples.
/// `on_epoch` is called after each epoch with its loss record. When
/// `val_samples` is non-empty a validation loss is computed per epoch and
/// the model is left holding the best-validation-loss weights.
pub fn train(
    model: &mut ModelHandle,
    samples: &[TrainSample],
    val_samples: &[TrainSample],
    mut on_epoch: impl FnMut(&EpochLossRecord),
) -> Result<TrainOutcome> {
    model.config.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("cannot train on an empty sample set".into()));
    }
    let size = model.config.extras.image_size;
    for s in samples.iter().chain(val_samples) {
        let (h, w, _) = s.image.dim();
        if (h, w) != (size, size) {
            return Err(Error::Contract(format!(
                "sample {} is {h}x{w}, expected the network input size {size}x{size}",
                s.id
            )));
        }
    }
    let backbone_trainable = model.backbone_trainable();
    let augment = model.config.extras.augment.clone();
    let augment_active = augment
        .as_ref()
        .map(|a| a.horizontal_flip > 0.0 || a.rotation_range > 0.0 || a.shift_range > 0.0 || a.zoom_range > 0.0)
        .unwrap_or(false);
    let cache_features = !backbone_trainable && !augment_active;
    let mut feature_cache: HashMap<usize, Array3<f32>> = HashMap::new();

    let epochs = model.config.epochs;
    let batch_size = model.config.batch_size;
    let lr = model.config.learning_rate as f32;
    let momentum = model.config.extras.momentum as f32;
    let clip = model.config.extras.grad_clip_norm as f32;
    let mut outcome = TrainOutcome::default();
    let mut best_val = f64::INFINITY;
    let mut best_weights: Option<Vec<(String, ArrayD<f32>)>> = None;

    for epoch in 1..=epochs {
        let mut sums: BTreeMap<&str, f64> = COMPONENT_NAMES.iter().map(|&n| (n, 0.0)).collect();
        let mut in_batch = 0usize;
        model.store.zero_grads();
        for (idx, sample) in samples.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(
                model.config.seed ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ idx as u64,
            );
            // Optional online augmentation (recomputes instances from the
            // warped masks).
            let (image, instances);
            let mut owned_instances: Vec<GtInstance>;
            let mut owned_image: PixelArray;
            if augment_active {
                let cfg = augment.as_ref().unwrap();
                let masks: Vec<Mask> = sample.instances.iter().map(|g| g.mask.clone()).collect();
                let item_seed = name_hash(&sample.id) ^ (epoch as u64).wrapping_mul(0x100000001B3);
                let mut variants = augment_pair(&sample.image, &masks, cfg, item_seed, 1)?;
                let (img, warped) = variants.pop().unwrap();
                owned_image = img;
                owned_instances = Vec::new();
                for (g, m) in sample.instances.iter().zip(warped) {
                    if let Some(bbox) = bbox_from_mask(&m) {
                        owned_instances.push(GtInstance {
                            label_index: g.label_index,
                            bbox,
                            mask: m,
                        });
                    }
                }
                image = &owned_image;
                instances = &owned_instances;
            } else {
                owned_image = PixelArray::zeros((0, 0, 0));
                owned_instances = Vec::new();
                let _ = (&mut owned_image, &mut owned_instances);
                image = &sample.image;
                instances = &sample.instances;
            }
            let losses = train_step(model, idx, image, instances, &mut rng, cache_features, &mut feature_cache)?;
            for (&name, sum) in sums.iter_mut() {
                let v = losses[name];
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("loss component {name} became non-finite on sample {}", sample.id),
                    });
                }
                *sum += v;
            }
            in_batch += 1;
            if in_batch == batch_size || idx + 1 == samples.len() {
                if in_batch > 1 {
                    let scale = 1.0 / in_batch as f32;
                    for name in model.store.names() {
                        if model.store.is_trainable(&name) {
                            model.store.grad_scale(&name, scale);
                        }
                    }
                }
                clip_grad_norm(&mut model.store, clip);
                model.store.sgd_step(lr, momentum);
                model.store.zero_grads();
                in_batch = 0;
            }
        }
        let n = samples.len() as f64;
        let components: BTreeMap<String, f64> = sums.iter().map(|(&k, &v)| (k.to_string(), v / n)).collect();
        let total: f64 = components.values().sum();
        if !total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: "total loss became non-finite".into(),
            });
        }
        // Validation pass: same losses, forward only (gradients discarded).
        let validation = if val_samples.is_empty() {
            total
        } else {
            let mut vsum = 0.0f64;
            for (v_idx, sample) in val_samples.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5EED_0A11 ^ v_idx as u64);
                let losses = train_step(
                    model,
                    samples.len() + v_idx,
                    &sample.image,
                    &sample.instances,
                    &mut rng,
                    !backbone_trainable,
                    &mut feature_cache,
                )?;
                vsum += losses.values().sum::<f64>();
            }
            model.store.zero_grads();
            vsum / val_samples.len() as f64
        };
        if !validation.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: "validation loss became non-finite".into(),
            });
        }
        if validation < best_val {
            best_val = validation;
            outcome.best_epoch = epoch;
            best_weights = Some(
                model
                    .store
                    .names()
                    .into_iter()
                    .map(|name| {
                        let v = model.store.get(&name).to_owned();
                        (name, v)
                    })
                    .collect::<Vec<_>>(),
            );
        }
        let record = EpochLossRecord {
            epoch,
            components,
            total,
            validation,
        };
        on_epoch(&record);
        outcome.epochs.push(record);
    }
    // Leave the model holding the best-validation weights.
    if !val_samples.is_empty() {
        if let Some(weights) = best_weights {
            for (name, value) in weights {
                model.store.set(&name, value);
            }
        }
    }
    Ok(outcome)
}

/// Forward + backward for a single image; accumulates gradients in the
/// store and returns the loss components.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut ModelHandle,
    sample_index: usize,
    image: &PixelArray,
    instances: &[GtInstance],
    rng: &mut ChaCha8Rng,
    cache_features: bool,
    feature_cache: &mut HashMap<usize, Array3<f32>>,
) -> Result<BTreeMap<&'static str, f64>> {
    let ex = model.config.extras.clone();
    let backbone_trainable = model.backbone_trainable();

    // Backbone features (cached across epochs when frozen and static).
    let (feat, bb_cache) = if cache_features {
        if let Some(f) = feature_cache.get(&sample_index) {
            (f.clone(), None)
        } else {
            let x = model.normalize(image);
            let (f, _) = model.forward_features(&x);
            feature_cache.insert(sample_index, f.clone());
            (f, None)
        }
    } else {
        let x = model.normalize(image);
        let (f, c) = model.forward_features(&x);
        (f, Some(c))
    };
    let (_, fh, fw) = feat.dim();
    let mut dfeat = if backbone_trainable {
        Some(Array3::<f32>::zeros(feat.dim()))
    } else {
        None
    };

    let (rpn_out, rpn_cache) = rpn::forward(&model.store, &feat);
    let num_anchors = model.num_anchors_per_cell();
    let anchors = model.anchors_for(fh, fw);

    // --- RPN losses -----------------------------------------------------
    let rpn_t = rpn_targets(
        &anchors,
        instances,
        ex.rpn_positive_iou as f32,
        ex.rpn_negative_iou as f32,
        ex.rpn_batch,
        rng,
    );
    let mut dcls = Array3::<f32>::zeros(rpn_out.cls.dim());
    let mut dbbox = Array3::<f32>::zeros(rpn_out.bbox.dim());
    let mut rpn_class_loss = 0.0f64;
    let mut rpn_bbox_loss = 0.0f64;
    if !rpn_t.is_empty() {
        let n = rpn_t.len();
        let logits = ArrayD::from_shape_vec(
            IxDyn(&[n]),
            rpn_t
                .iter()
                .map(|t| rpn::logit_at(&rpn_out, num_anchors, t.anchor_index).0)
                .collect(),
        )
        .unwrap();
        let targets = ArrayD::from_shape_vec(
            IxDyn(&[n]),
            rpn_t.iter().map(|t| if t.positive { 1.0f32 } else { 0.0 }).collect(),
        )
        .unwrap();
        let select = ArrayD::from_elem(IxDyn(&[n]), 1.0f32);
        let (loss, dl) = bce_with_logits_mean(&logits, &targets, &select);
        rpn_class_loss = loss as f64;
        for (t, &g) in rpn_t.iter().zip(dl.iter()) {
            let (i, j, a) = unflatten(t.anchor_index, num_anchors, fw);
            dcls[[a, i, j]] += g;
        }
        // Box regression on the positives.
        let positives: Vec<_> = rpn_t.iter().filter(|t| t.positive).collect();
        if !positives.is_empty() {
            let p = positives.len();
            let mut pred = Array2::<f32>::zeros((p, 4));
            let mut target = Array2::<f32>::zeros((p, 4));
            for (r, t) in positives.iter().enumerate() {
                let (_, d) = rpn::logit_at(&rpn_out, num_anchors, t.anchor_index);
                for k in 0..4 {
                    pred[[r, k]] = d[k];
                    target[[r, k]] = t.deltas[k];
                }
            }
            let (loss, dp) = smooth_l1_mean(&pred, &target);
            rpn_bbox_loss = loss as f64;
            for (r, t) in positives.iter().enumerate() {
                let (i, j, a) = unflatten(t.anchor_index, num_anchors, fw);
                for k in 0..4 {
                    dbbox[[4 * a + k, i, j]] += dp[[r, k]];
                }
            }
        }
    }
    let drpn_feat = rpn::backward(&mut model.store, &rpn_cache, &dcls, &dbbox, backbone_trainable);
    if let (Some(df), Some(d)) = (dfeat.as_mut(), drpn_feat) {
        *df += &d;
    }

    // --- RoI head losses --------------------------------------------------
    let proposals = rpn::proposals(
        &rpn_out,
        &anchors,
        num_anchors,
        ex.image_size,
        ex.rpn_objectness_threshold as f32,
        ex.rpn_pre_nms_top_n,
        ex.rpn_nms_iou as f32,
        ex.rpn_post_nms_train,
    );
    let prop_boxes: Vec<BoxPx> = proposals.iter().map(|(b, _)| *b).collect();
    let rois = roi_targets(
        &prop_boxes,
        instances,
        ex.roi_positive_iou as f32,
        ex.roi_batch,
        ex.roi_positive_fraction,
        rng,
    );
    let mut class_loss = 0.0f64;
    let mut bbox_loss = 0.0f64;
    let mut mask_loss = 0.0f64;
    if !rois.is_empty() {
        let boxes: Vec<BoxPx> = rois.iter().map(|r| r.bbox).collect();
        let pooled = model.pool_rois(&feat, &boxes)?;
        let (head_out, head_cache) = box_head_forward(&model.store, &pooled);
        let labels: Vec<usize> = rois.iter().map(|r| r.label).collect();
        let (closs, dcls_head) = softmax_cross_entropy(&head_out.cls, &labels);
        class_loss = closs as f64;
        // Per-class box regression on foreground rois.
        let fg: Vec<(usize, &super::targets::RoiSample)> =
            rois.iter().enumerate().filter(|(_, r)| r.label > 0).collect();
        let mut dbbox_head = Array2::<f32>::zeros(head_out.bbox.raw_dim());
        if !fg.is_empty() {
            let p = fg.len();
            let mut pred = Array2::<f32>::zeros((p, 4));
            let mut target = Array2::<f32>::zeros((p, 4));
            for (r, (n, roi)) in fg.iter().enumerate() {
                for k in 0..4 {
                    pred[[r, k]] = head_out.bbox[[*n, 4 * roi.label + k]];
                    target[[r, k]] = roi.deltas[k];
                }
            }
            let (bloss, dp) = smooth_l1_mean(&pred, &target);
            bbox_loss = bloss as f64;
            for (r, (n, roi)) in fg.iter().enumerate() {
                for k in 0..4 {
                    dbbox_head[[*n, 4 * roi.label + k]] += dp[[r, k]];
                }
            }
        }
        let dpooled = box_head_backward(&mut model.store, &head_cache, &dcls_head, &dbbox_head, true).unwrap();
        if let Some(df) = dfeat.as_mut() {
            let c = feat.dim().0;
            let p = ex.roi_pool_size;
            for (n, b) in boxes.iter().enumerate() {
                let row = dpooled.row(n).to_owned();
                let droi = row.into_shape_with_order((c, p, p)).unwrap();
                roi_align_backward(df, &model.norm_box(b), &droi, ex.samples_per_bin)?;
            }
        }

        // Mask head on the foreground rois.
        let positives: Vec<&super::targets::RoiSample> = rois.iter().filter(|r| r.gt_index.is_some()).collect();
        if !positives.is_empty() {
            let pcount = positives.len() as f32;
            for roi in positives {
                let gt = &instances[roi.gt_index.unwrap()];
                let pooled = roi_align(
                    &feat,
                    &model.norm_box(&roi.bbox),
                    (ex.mask_pool_size, ex.mask_pool_size),
                    ex.samples_per_bin,
                )?;
                let (logits, cache) = mask_head_forward(&model.store, &pooled);
                let target_2d = mask_target(&gt.mask, &roi.bbox, ex.mask_pool_size);
                let (k_fg, mh, mw) = logits.dim();
                let mut targets = ArrayD::<f32>::zeros(IxDyn(&[k_fg, mh, mw]));
                let mut select = ArrayD::<f32>::zeros(IxDyn(&[k_fg, mh, mw]));
                let ch = roi.label - 1;
                for i in 0..mh {
                    for j in 0..mw {
                        targets[[ch, i, j]] = target_2d[[i, j]];
                        select[[ch, i, j]] = 1.0;
                    }
                }
                let logits_d = logits.clone().into_dyn();
                let (mloss, dl) = bce_with_logits_mean(&logits_d, &targets, &select);
                mask_loss += mloss as f64 / pcount as f64;
                let mut dlogits = dl.into_dimensionality::<ndarray::Ix3>().unwrap();
                dlogits.mapv_inplace(|v| v / pcount);
                let dmpooled = mask_head_backward(&mut model.store, &cache, &dlogits, dfeat.is_some());
                if let (Some(df), Some(dp)) = (dfeat.as_mut(), dmpooled) {
                    roi_align_backward(df, &model.norm_box(&roi.bbox), &dp, ex.samples_per_bin)?;
                }
            }
        }
    }

    if let (Some(df), Some(cache)) = (dfeat, bb_cache.as_ref()) {
        model.backbone.backward(&mut model.store, cache, &df);
    }

    Ok(BTreeMap::from([
        ("rpn_class", rpn_class_loss),
        ("rpn_bbox", rpn_bbox_loss),
        ("class", class_loss),
        ("bbox", bbox_loss),
        ("mask", mask_loss),
    ]))
}

/// Flat anchor index to (row, col, anchor-channel).
fn unflatten(flat: usize, num_anchors: usize, fw: usize) -> (usize, usize, usize) {
    let a = flat % num_anchors;
    let cell = flat / num_anchors;
    (cell / fw, cell % fw, a)
}
