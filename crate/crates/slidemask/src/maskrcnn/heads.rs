//! Detection heads on top of RoI-aligned features: a two-layer fully
//! connected box head with per-class classification and box regression
//! outputs, and a small convolutional mask head with one output channel
//! per foreground class.
//!
//! Class channel 0 is background. Box regression is per class: deltas for
//! class k live in columns 4k..4k+4.

use ndarray::{Array2, Array3};

use crate::nn::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, relu2_backward, relu2_forward,
    relu_backward, relu_forward, ConvCache, LinearCache, ParamStore,
};

pub struct BoxHeadOutput {
    /// Class logits, (N, K+1).
    pub cls: Array2<f32>,
    /// Per-class box deltas, (N, 4*(K+1)).
    pub bbox: Array2<f32>,
}

pub struct BoxHeadCache {
    fc1: LinearCache,
    h1: Array2<f32>,
    fc2: LinearCache,
    h2: Array2<f32>,
    cls: LinearCache,
    bbox: LinearCache,
}

pub fn register_box_head(store: &mut ParamStore, in_features: usize, hidden: usize, num_classes: usize) {
    store.insert_he("head.fc1.w", &[hidden, in_features], true);
    store.insert_zeros("head.fc1.b", &[hidden], true);
    store.insert_he("head.fc2.w", &[hidden, hidden], true);
    store.insert_zeros("head.fc2.b", &[hidden], true);
    store.insert_he_scaled("head.cls.w", &[num_classes, hidden], 0.1, true);
    store.insert_zeros("head.cls.b", &[num_classes], true);
    store.insert_he_scaled("head.bbox.w", &[4 * num_classes, hidden], 0.1, true);
    store.insert_zeros("head.bbox.b", &[4 * num_classes], true);
}

/// `pooled` is the flattened RoI feature batch, (N, C*ph*pw).
pub fn box_head_forward(store: &ParamStore, pooled: &Array2<f32>) -> (BoxHeadOutput, BoxHeadCache) {
    let (a1, fc1) = linear_forward(store, "head.fc1", pooled);
    let h1 = relu2_forward(&a1);
    let (a2, fc2) = linear_forward(store, "head.fc2", &h1);
    let h2 = relu2_forward(&a2);
    let (cls, cls_cache) = linear_forward(store, "head.cls", &h2);
    let (bbox, bbox_cache) = linear_forward(store, "head.bbox", &h2);
    (
        BoxHeadOutput { cls, bbox },
        BoxHeadCache {
            fc1,
            h1,
            fc2,
            h2,
            cls: cls_cache,
            bbox: bbox_cache,
        },
    )
}

pub fn box_head_backward(
    store: &mut ParamStore,
    cache: &BoxHeadCache,
    dcls: &Array2<f32>,
    dbbox: &Array2<f32>,
    need_dx: bool,
) -> Option<Array2<f32>> {
    let d1 = linear_backward(store, "head.cls", &cache.cls, dcls, true).unwrap();
    let d2 = linear_backward(store, "head.bbox", &cache.bbox, dbbox, true).unwrap();
    let dh2 = relu2_backward(&cache.h2, &(d1 + d2));
    let da1 = linear_backward(store, "head.fc2", &cache.fc2, &dh2, true).unwrap();
    let dh1 = relu2_backward(&cache.h1, &da1);
    linear_backward(store, "head.fc1", &cache.fc1, &dh1, need_dx)
}

pub struct MaskHeadCache {
    conv1: ConvCache,
    h1: Array3<f32>,
    conv2: ConvCache,
    h2: Array3<f32>,
    predict: ConvCache,
}

pub fn register_mask_head(store: &mut ParamStore, in_channels: usize, mask_channels: usize, num_foreground: usize) {
    store.insert_he("mask.conv1.w", &[mask_channels, in_channels, 3, 3], true);
    store.insert_zeros("mask.conv1.b", &[mask_channels], true);
    store.insert_he("mask.conv2.w", &[mask_channels, mask_channels, 3, 3], true);
    store.insert_zeros("mask.conv2.b", &[mask_channels], true);
    store.insert_he_scaled("mask.predict.w", &[num_foreground, mask_channels, 1, 1], 0.1, true);
    store.insert_zeros("mask.predict.b", &[num_foreground], true);
}

/// One RoI at a time: (C, m, m) pooled feature to (K, m, m) mask logits,
/// channel k-1 for foreground class k.
pub fn mask_head_forward(store: &ParamStore, pooled: &Array3<f32>) -> (Array3<f32>, MaskHeadCache) {
    let (a1, conv1) = conv2d_forward(store, "mask.conv1", pooled, 1, 1);
    let h1 = relu_forward(&a1);
    let (a2, conv2) = conv2d_forward(store, "mask.conv2", &h1, 1, 1);
    let h2 = relu_forward(&a2);
    let (logits, predict) = conv2d_forward(store, "mask.predict", &h2, 1, 0);
    (
        logits,
        MaskHeadCache {
            conv1,
            h1,
            conv2,
            h2,
            predict,
        },
    )
}

pub fn mask_head_backward(
    store: &mut ParamStore,
    cache: &MaskHeadCache,
    dlogits: &Array3<f32>,
    need_dx: bool,
) -> Option<Array3<f32>> {
    let dh2 = conv2d_backward(store, "mask.predict", &cache.predict, dlogits, true).unwrap();
    let da2 = relu_backward(&cache.h2, &dh2);
    let dh1 = conv2d_backward(store, "mask.conv2", &cache.conv2, &da2, true).unwrap();
    let da1 = relu_backward(&cache.h1, &dh1);
    conv2d_backward(store, "mask.conv1", &cache.conv1, &da1, need_dx)
}
