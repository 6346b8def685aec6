//! Anchor grids and box arithmetic: IoU, delta encoding/decoding, clipping,
//! and non-maximum suppression. Boxes are (y1, x1, y2, x2) in input pixels.

pub type BoxPx = [f32; 4];

pub fn box_area(b: &BoxPx) -> f32 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn iou(a: &BoxPx, b: &BoxPx) -> f32 {
    let y1 = a[0].max(b[0]);
    let x1 = a[1].max(b[1]);
    let y2 = a[2].min(b[2]);
    let x2 = a[3].min(b[3]);
    let inter = (y2 - y1).max(0.0) * (x2 - x1).max(0.0);
    let union = box_area(a) + box_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One anchor per (cell, scale x ratio) combination, centered on feature
/// cells. Ratio is height/width. Anchor index a at cell (i, j) pairs with
/// logit channel a.
pub fn generate_anchors(feat_h: usize, feat_w: usize, stride: usize, scales: &[f64], ratios: &[f64]) -> Vec<BoxPx> {
    let mut anchors = Vec::with_capacity(feat_h * feat_w * scales.len() * ratios.len());
    for i in 0..feat_h {
        for j in 0..feat_w {
            let cy = (i as f64 + 0.5) * stride as f64;
            let cx = (j as f64 + 0.5) * stride as f64;
            for &scale in scales {
                for &ratio in ratios {
                    let h = scale * ratio.sqrt();
                    let w = scale / ratio.sqrt();
                    anchors.push([
                        (cy - h / 2.0) as f32,
                        (cx - w / 2.0) as f32,
                        (cy + h / 2.0) as f32,
                        (cx + w / 2.0) as f32,
                    ]);
                }
            }
        }
    }
    anchors
}

/// Standard (ty, tx, th, tw) parametrization of gt relative to an anchor.
pub fn encode_deltas(anchor: &BoxPx, gt: &BoxPx) -> [f32; 4] {
    let ah = (anchor[2] - anchor[0]).max(1e-3);
    let aw = (anchor[3] - anchor[1]).max(1e-3);
    let acy = anchor[0] + ah / 2.0;
    let acx = anchor[1] + aw / 2.0;
    let gh = (gt[2] - gt[0]).max(1e-3);
    let gw = (gt[3] - gt[1]).max(1e-3);
    let gcy = gt[0] + gh / 2.0;
    let gcx = gt[1] + gw / 2.0;
    [(gcy - acy) / ah, (gcx - acx) / aw, (gh / ah).ln(), (gw / aw).ln()]
}

pub fn decode_deltas(anchor: &BoxPx, deltas: &[f32; 4]) -> BoxPx {
    let ah = (anchor[2] - anchor[0]).max(1e-3);
    let aw = (anchor[3] - anchor[1]).max(1e-3);
    let acy = anchor[0] + ah / 2.0;
    let acx = anchor[1] + aw / 2.0;
    // Clamp the log-scale terms so early training can't explode the box.
    let cy = acy + deltas[0].clamp(-4.0, 4.0) * ah;
    let cx = acx + deltas[1].clamp(-4.0, 4.0) * aw;
    let h = ah * deltas[2].clamp(-4.0, 4.0).exp();
    let w = aw * deltas[3].clamp(-4.0, 4.0).exp();
    [cy - h / 2.0, cx - w / 2.0, cy + h / 2.0, cx + w / 2.0]
}

pub fn clip_box(b: &BoxPx, size: f32) -> BoxPx {
    [
        b[0].clamp(0.0, size),
        b[1].clamp(0.0, size),
        b[2].clamp(0.0, size),
        b[3].clamp(0.0, size),
    ]
}

/// Greedy NMS; returns the kept indices in descending score order.
/// Assumes the inputs are already sorted by descending score.
pub fn nms_sorted(boxes: &[BoxPx], iou_threshold: f32) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in 0..boxes.len() {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = [1.0, 2.0, 5.0, 6.0];
        assert!((iou(&b, &b) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn half_overlap_iou() {
        // [0,0,2,2] vs [0,1,2,3]: inter 2, union 6.
        let v = iou(&[0.0, 0.0, 2.0, 2.0], &[0.0, 1.0, 2.0, 3.0]);
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn encode_decode_round_trips() {
        let anchor = [10.0, 20.0, 42.0, 52.0];
        let gt = [14.0, 18.0, 40.0, 60.0];
        let deltas = encode_deltas(&anchor, &gt);
        let back = decode_deltas(&anchor, &deltas);
        for (a, b) in gt.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn anchor_count_and_layout() {
        let anchors = generate_anchors(2, 3, 16, &[32.0], &[1.0, 2.0]);
        assert_eq!(anchors.len(), 2 * 3 * 2);
        // First anchor: cell (0,0), scale 32, ratio 1 -> centered at (8, 8).
        let a = anchors[0];
        assert!((a[0] - (8.0 - 16.0)).abs() < 1e-4);
        assert!((a[2] - (8.0 + 16.0)).abs() < 1e-4);
    }

    #[test]
    fn nms_suppresses_overlaps() {
        let boxes = vec![
            [0.0, 0.0, 10.0, 10.0],
            [1.0, 1.0, 11.0, 11.0], // heavy overlap with the first
            [20.0, 20.0, 30.0, 30.0],
        ];
        let keep = nms_sorted(&boxes, 0.5);
        assert_eq!(keep, vec![0, 2]);
    }
}
