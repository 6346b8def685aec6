//! Training-target assignment: anchor labelling for the RPN, RoI sampling
//! for the detection heads, and mask-target cropping.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::anchors::{encode_deltas, iou, BoxPx};

/// One annotated instance at network-input resolution.
#[derive(Debug, Clone)]
pub struct GtInstance {
    /// Foreground class index, 1..=K (0 is implicit background).
    pub label_index: usize,
    pub bbox: BoxPx,
    /// Binary mask over the full network input.
    pub mask: Array2<u8>,
}

#[derive(Debug, Clone, Copy)]
pub struct RpnTarget {
    pub anchor_index: usize,
    pub positive: bool,
    /// Regression target; only meaningful for positives.
    pub deltas: [f32; 4],
}

/// Label anchors against ground truth and sample a balanced minibatch:
/// positives have IoU >= `pos_iou` (or are the best anchor for some gt),
/// negatives have max IoU < `neg_iou`, anything in between is ignored.
pub fn rpn_targets(
    anchors: &[BoxPx],
    gts: &[GtInstance],
    pos_iou: f32,
    neg_iou: f32,
    batch: usize,
    rng: &mut impl Rng,
) -> Vec<RpnTarget> {
    if gts.is_empty() {
        return Vec::new();
    }
    let mut best_iou = vec![0.0f32; anchors.len()];
    let mut best_gt = vec![0usize; anchors.len()];
    let mut gt_best: Vec<(usize, f32)> = vec![(0, -1.0); gts.len()];
    for (k, a) in anchors.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(a, &gt.bbox);
            if v > best_iou[k] {
                best_iou[k] = v;
                best_gt[k] = g;
            }
            if v > gt_best[g].1 {
                gt_best[g] = (k, v);
            }
        }
    }
    let mut positive: Vec<usize> = (0..anchors.len()).filter(|&k| best_iou[k] >= pos_iou).collect();
    for &(k, v) in &gt_best {
        if v > 0.0 && !positive.contains(&k) {
            positive.push(k);
        }
    }
    let mut negative: Vec<usize> = (0..anchors.len())
        .filter(|&k| best_iou[k] < neg_iou && !positive.contains(&k))
        .collect();
    positive.shuffle(rng);
    positive.truncate(batch / 2);
    negative.shuffle(rng);
    negative.truncate(batch.saturating_sub(positive.len()));
    let mut out: Vec<RpnTarget> = positive
        .into_iter()
        .map(|k| RpnTarget {
            anchor_index: k,
            positive: true,
            deltas: encode_deltas(&anchors[k], &gts[best_gt[k]].bbox),
        })
        .collect();
    out.extend(negative.into_iter().map(|k| RpnTarget {
        anchor_index: k,
        positive: false,
        deltas: [0.0; 4],
    }));
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RoiSample {
    pub bbox: BoxPx,
    /// 0 for background, 1..=K for foreground.
    pub label: usize,
    /// Regression target against the matched gt; only meaningful for
    /// foreground samples.
    pub deltas: [f32; 4],
    pub gt_index: Option<usize>,
}

/// Sample RoIs for the detection heads. Ground-truth boxes are appended to
/// the proposal set so positives always exist when gt does.
pub fn roi_targets(
    proposals: &[BoxPx],
    gts: &[GtInstance],
    pos_iou: f32,
    batch: usize,
    pos_fraction: f64,
    rng: &mut impl Rng,
) -> Vec<RoiSample> {
    let mut rois: Vec<BoxPx> = proposals.to_vec();
    rois.extend(gts.iter().map(|g| g.bbox));
    let mut fg: Vec<RoiSample> = Vec::new();
    let mut bg: Vec<RoiSample> = Vec::new();
    for r in &rois {
        let mut best = (0usize, 0.0f32);
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(r, &gt.bbox);
            if v > best.1 {
                best = (g, v);
            }
        }
        if !gts.is_empty() && best.1 >= pos_iou {
            let gt = &gts[best.0];
            fg.push(RoiSample {
                bbox: *r,
                label: gt.label_index,
                deltas: encode_deltas(r, &gt.bbox),
                gt_index: Some(best.0),
            });
        } else {
            bg.push(RoiSample {
                bbox: *r,
                label: 0,
                deltas: [0.0; 4],
                gt_index: None,
            });
        }
    }
    fg.shuffle(rng);
    fg.truncate(((batch as f64) * pos_fraction).round() as usize);
    bg.shuffle(rng);
    bg.truncate(batch - fg.len().min(batch));
    fg.extend(bg);
    fg
}

/// Crop a gt mask to an RoI and resample it (nearest neighbour) onto a
/// size x size target grid with values in {0, 1}.
pub fn mask_target(gt_mask: &Array2<u8>, roi: &BoxPx, size: usize) -> Array2<f32> {
    let (h, w) = gt_mask.dim();
    Array2::from_shape_fn((size, size), |(i, j)| {
        let y = roi[0] + (i as f32 + 0.5) / size as f32 * (roi[2] - roi[0]);
        let x = roi[1] + (j as f32 + 0.5) / size as f32 * (roi[3] - roi[1]);
        let yi = (y.floor().max(0.0) as usize).min(h.saturating_sub(1));
        let xi = (x.floor().max(0.0) as usize).min(w.saturating_sub(1));
        if gt_mask[[yi, xi]] > 0 {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt(label: usize, bbox: BoxPx, h: usize, w: usize) -> GtInstance {
        let mut mask = Array2::<u8>::zeros((h, w));
        for y in bbox[0] as usize..bbox[2] as usize {
            for x in bbox[1] as usize..bbox[3] as usize {
                mask[[y, x]] = 1;
            }
        }
        GtInstance {
            label_index: label,
            bbox,
            mask,
        }
    }

    #[test]
    fn rpn_targets_mark_the_matching_anchor_positive() {
        let anchors = vec![
            [10.0, 10.0, 30.0, 30.0], // matches gt well
            [50.0, 50.0, 60.0, 60.0], // disjoint
        ];
        let gts = vec![gt(1, [11.0, 11.0, 29.0, 29.0], 64, 64)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rpn_targets(&anchors, &gts, 0.7, 0.3, 8, &mut rng);
        let pos: Vec<_> = t.iter().filter(|x| x.positive).collect();
        let neg: Vec<_> = t.iter().filter(|x| !x.positive).collect();
        assert_eq!(pos.len(), 1);
        assert_eq!(pos[0].anchor_index, 0);
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].anchor_index, 1);
        // Decoding the target deltas recovers the gt box.
        let back = super::super::anchors::decode_deltas(&anchors[0], &pos[0].deltas);
        for (a, b) in back.iter().zip(gts[0].bbox.iter()) {
            assert!((a - b).abs() < 1e-2);
        }
    }

    #[test]
    fn best_anchor_per_gt_is_positive_even_below_threshold() {
        // No anchor reaches 0.7 IoU, but the best one must still be positive.
        let anchors = vec![[0.0, 0.0, 40.0, 40.0], [100.0, 100.0, 140.0, 140.0]];
        let gts = vec![gt(2, [0.0, 0.0, 20.0, 20.0], 160, 160)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = rpn_targets(&anchors, &gts, 0.7, 0.1, 8, &mut rng);
        assert!(t.iter().any(|x| x.positive && x.anchor_index == 0));
    }

    #[test]
    fn roi_targets_include_gt_as_foreground() {
        let gts = vec![gt(3, [8.0, 8.0, 24.0, 24.0], 64, 64)];
        let proposals = vec![[40.0, 40.0, 60.0, 60.0]]; // pure background
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = roi_targets(&proposals, &gts, 0.5, 8, 0.5, &mut rng);
        assert!(samples.iter().any(|s| s.label == 3 && s.gt_index == Some(0)));
        assert!(samples.iter().any(|s| s.label == 0));
        assert!(samples.len() <= 8);
    }

    #[test]
    fn mask_target_crops_the_roi() {
        // gt mask fills rows 4..8, cols 4..8 of a 16x16 frame.
        let g = gt(1, [4.0, 4.0, 8.0, 8.0], 16, 16);
        // RoI exactly over the gt: target is all ones.
        let t = mask_target(&g.mask, &[4.0, 4.0, 8.0, 8.0], 4);
        assert!(t.iter().all(|&v| v == 1.0));
        // RoI covering the whole frame: fraction of ones = 16/256.
        let t2 = mask_target(&g.mask, &[0.0, 0.0, 16.0, 16.0], 16);
        let ones: f32 = t2.sum();
        assert_eq!(ones, 16.0);
    }
}
