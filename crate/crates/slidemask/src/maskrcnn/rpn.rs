//! Region proposal network: a 3x3 conv trunk over the backbone feature map
//! with 1x1 objectness and box-delta outputs, plus proposal generation
//! (decode, clip, NMS).
//!
//! Channel layout matches the anchor order from `anchors::generate_anchors`:
//! anchor a at cell (i, j) reads objectness channel a and delta channels
//! 4a..4a+4, and has flat index (i*W + j)*A + a.

use ndarray::Array3;

use crate::nn::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, sigmoid, ConvCache, ParamStore};

use super::anchors::{clip_box, decode_deltas, nms_sorted, BoxPx};

pub struct RpnOutput {
    /// Objectness logits, (A, Hf, Wf).
    pub cls: Array3<f32>,
    /// Box deltas, (4A, Hf, Wf).
    pub bbox: Array3<f32>,
}

pub struct RpnCache {
    conv: ConvCache,
    trunk: Array3<f32>,
    cls: ConvCache,
    bbox: ConvCache,
}

pub fn register(store: &mut ParamStore, in_channels: usize, hidden: usize, num_anchors: usize) {
    store.insert_he("rpn.conv.w", &[hidden, in_channels, 3, 3], true);
    store.insert_zeros("rpn.conv.b", &[hidden], true);
    store.insert_he_scaled("rpn.cls.w", &[num_anchors, hidden, 1, 1], 0.1, true);
    store.insert_zeros("rpn.cls.b", &[num_anchors], true);
    store.insert_he_scaled("rpn.bbox.w", &[4 * num_anchors, hidden, 1, 1], 0.1, true);
    store.insert_zeros("rpn.bbox.b", &[4 * num_anchors], true);
}

pub fn forward(store: &ParamStore, feature: &Array3<f32>) -> (RpnOutput, RpnCache) {
    let (c, conv) = conv2d_forward(store, "rpn.conv", feature, 1, 1);
    let trunk = relu_forward(&c);
    let (cls, cls_cache) = conv2d_forward(store, "rpn.cls", &trunk, 1, 0);
    let (bbox, bbox_cache) = conv2d_forward(store, "rpn.bbox", &trunk, 1, 0);
    (
        RpnOutput { cls, bbox },
        RpnCache {
            conv,
            trunk,
            cls: cls_cache,
            bbox: bbox_cache,
        },
    )
}

/// Backward through the RPN given gradients on its two outputs; returns the
/// gradient w.r.t. the backbone feature map when requested.
pub fn backward(
    store: &mut ParamStore,
    cache: &RpnCache,
    dcls: &Array3<f32>,
    dbbox: &Array3<f32>,
    need_dfeat: bool,
) -> Option<Array3<f32>> {
    let d1 = conv2d_backward(store, "rpn.cls", &cache.cls, dcls, true).unwrap();
    let d2 = conv2d_backward(store, "rpn.bbox", &cache.bbox, dbbox, true).unwrap();
    let dtrunk = relu_backward(&cache.trunk, &(d1 + d2));
    conv2d_backward(store, "rpn.conv", &cache.conv, &dtrunk, need_dfeat)
}

/// Flat anchor index -> (objectness logit, decoded deltas).
pub fn logit_at(out: &RpnOutput, num_anchors: usize, flat: usize) -> (f32, [f32; 4]) {
    let (_, _, wf) = out.cls.dim();
    let a = flat % num_anchors;
    let cell = flat / num_anchors;
    let i = cell / wf;
    let j = cell % wf;
    let logit = out.cls[[a, i, j]];
    let deltas = [
        out.bbox[[4 * a, i, j]],
        out.bbox[[4 * a + 1, i, j]],
        out.bbox[[4 * a + 2, i, j]],
        out.bbox[[4 * a + 3, i, j]],
    ];
    (logit, deltas)
}

/// Decode, clip, score-threshold, and NMS the anchor grid into proposals.
/// Returned boxes are (y1, x1, y2, x2) in input pixels, score-sorted.
#[allow(clippy::too_many_arguments)]
pub fn proposals(
    out: &RpnOutput,
    anchors: &[BoxPx],
    num_anchors: usize,
    image_size: usize,
    objectness_threshold: f32,
    pre_nms_top_n: usize,
    nms_iou: f32,
    post_nms_top_n: usize,
) -> Vec<(BoxPx, f32)> {
    let mut scored: Vec<(usize, f32)> = (0..anchors.len())
        .map(|k| (k, sigmoid(logit_at(out, num_anchors, k).0)))
        .filter(|&(_, s)| s >= objectness_threshold)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(pre_nms_top_n);
    let mut boxes: Vec<BoxPx> = Vec::with_capacity(scored.len());
    let mut scores: Vec<f32> = Vec::with_capacity(scored.len());
    for &(k, s) in &scored {
        let (_, deltas) = logit_at(out, num_anchors, k);
        let b = clip_box(&decode_deltas(&anchors[k], &deltas), image_size as f32);
        if b[2] - b[0] >= 1.0 && b[3] - b[1] >= 1.0 {
            boxes.push(b);
            scores.push(s);
        }
    }
    let keep = nms_sorted(&boxes, nms_iou);
    keep.into_iter()
        .take(post_nms_top_n)
        .map(|k| (boxes[k], scores[k]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskrcnn::anchors::generate_anchors;

    fn setup(in_c: usize, hidden: usize, a: usize) -> ParamStore {
        let mut store = ParamStore::new(21);
        register(&mut store, in_c, hidden, a);
        store
    }

    #[test]
    fn output_shapes_follow_anchor_count() {
        let store = setup(8, 16, 9);
        let feat = Array3::from_elem((8, 5, 6), 0.2f32);
        let (out, _) = forward(&store, &feat);
        assert_eq!(out.cls.dim(), (9, 5, 6));
        assert_eq!(out.bbox.dim(), (36, 5, 6));
    }

    #[test]
    fn logit_indexing_matches_anchor_layout() {
        let store = setup(4, 8, 6);
        let feat = Array3::from_shape_fn((4, 3, 4), |(c, y, x)| ((c + 2 * y + 3 * x) as f32 * 0.07).sin());
        let (out, _) = forward(&store, &feat);
        // Flat index for cell (1, 2), anchor 4 with A=6, W=4.
        let flat = (4 + 2) * 6 + 4;
        let (logit, deltas) = logit_at(&out, 6, flat);
        assert_eq!(logit, out.cls[[4, 1, 2]]);
        assert_eq!(deltas[2], out.bbox[[4 * 4 + 2, 1, 2]]);
    }

    #[test]
    fn proposals_are_clipped_and_capped() {
        let store = setup(4, 8, 9);
        let feat = Array3::from_shape_fn((4, 4, 4), |(c, y, x)| ((c * 5 + y * 2 + x) as f32 * 0.11).cos());
        let (out, _) = forward(&store, &feat);
        let anchors = generate_anchors(4, 4, 16, &[32.0, 64.0, 128.0], &[0.5, 1.0, 2.0]);
        let props = proposals(&out, &anchors, 9, 64, 0.0, 100, 0.7, 10);
        assert!(props.len() <= 10);
        assert!(!props.is_empty());
        for (b, s) in &props {
            assert!((0.0..=1.0).contains(s));
            assert!(b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= 64.0 && b[3] <= 64.0);
            assert!(b[2] > b[0] && b[3] > b[1]);
        }
        // Score-sorted.
        for w in props.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn backward_produces_feature_gradient() {
        let mut store = setup(4, 8, 3);
        let feat = Array3::from_shape_fn((4, 4, 4), |(c, y, x)| ((c + y + x) as f32 * 0.1).sin());
        let (out, cache) = forward(&store, &feat);
        let dcls = Array3::from_elem(out.cls.dim(), 1.0f32);
        let dbbox = Array3::from_elem(out.bbox.dim(), 0.5f32);
        let dfeat = backward(&mut store, &cache, &dcls, &dbbox, true).unwrap();
        assert_eq!(dfeat.dim(), feat.dim());
        assert!(store.grad("rpn.conv.w").iter().any(|&g| g != 0.0));
    }
}
