//! Residual backbone (bottleneck blocks, frozen batch-norm affines).
//!
//! The stage layout follows the standard 50/101-layer residual recipe: a
//! 7x7 stride-2 stem plus 3x3 stride-2 max pool, then four stages of
//! bottleneck blocks ([3,4,6,3] or [3,4,23,3]). Channel widths scale with
//! `base_width` so the same topology runs at desk scale on CPU. Features
//! are tapped after `stages_used` (default 4, stride 16).
//!
//! Parameter naming: `backbone.stem.conv`, `backbone.stem.bn`,
//! `backbone.stage{S}.block{B}.{conv1,bn1,conv2,bn2,conv3,bn3}` and, for
//! projection shortcuts, `...block{B}.down.conv` / `...down.bn`.

use ndarray::Array3;

use crate::nn::{
    conv2d_backward, conv2d_forward, frozen_bn_backward, frozen_bn_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, ConvCache, ParamStore, PoolCache,
};

use super::BackboneKind;

#[derive(Debug, Clone)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub base_width: usize,
}

struct BlockSpec {
    name: String,
    width: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    has_down: bool,
}

struct BlockCache {
    conv1: ConvCache,
    out1: Array3<f32>,
    conv2: ConvCache,
    out2: Array3<f32>,
    conv3: ConvCache,
    down: Option<ConvCache>,
    y: Array3<f32>,
}

pub struct BackboneCache {
    stem_conv: ConvCache,
    stem_out: Array3<f32>,
    pool: PoolCache,
    blocks: Vec<BlockCache>,
}

impl Backbone {
    pub fn new(kind: BackboneKind, base_width: usize) -> Self {
        Backbone { kind, base_width }
    }

    /// Internal bottleneck width of stage s (2..=5).
    fn stage_width(&self, stage: usize) -> usize {
        self.base_width << (stage - 2)
    }

    /// Output channels of the tapped feature map.
    pub fn out_channels(&self) -> usize {
        if self.kind.stages_used == 1 {
            self.base_width
        } else {
            4 * self.stage_width(self.kind.stages_used)
        }
    }

    fn blocks(&self) -> Vec<BlockSpec> {
        let counts = self.kind.depth.block_counts();
        let mut specs = Vec::new();
        let mut c_in = self.base_width;
        for stage in 2..=self.kind.stages_used.max(1) {
            if stage < 2 {
                break;
            }
            let width = self.stage_width(stage);
            let c_out = 4 * width;
            for b in 0..counts[stage - 2] {
                let stride = if stage > 2 && b == 0 { 2 } else { 1 };
                specs.push(BlockSpec {
                    name: format!("backbone.stage{stage}.block{b}"),
                    width,
                    c_in,
                    c_out,
                    stride,
                    has_down: c_in != c_out || stride != 1,
                });
                c_in = c_out;
            }
        }
        specs
    }

    /// Create every backbone tensor in the store (He-normal convs, identity
    /// batch-norm affines). BN affines are never trainable; conv
    /// trainability is decided later by the scope.
    pub fn register(&self, store: &mut ParamStore) {
        let bw = self.base_width;
        store.insert_he("backbone.stem.conv.w", &[bw, 3, 7, 7], false);
        store.insert_zeros("backbone.stem.conv.b", &[bw], false);
        store.insert_const("backbone.stem.bn.scale", &[bw], 1.0, false);
        store.insert_zeros("backbone.stem.bn.shift", &[bw], false);
        for s in self.blocks() {
            store.insert_he(&format!("{}.conv1.w", s.name), &[s.width, s.c_in, 1, 1], false);
            store.insert_zeros(&format!("{}.conv1.b", s.name), &[s.width], false);
            store.insert_const(&format!("{}.bn1.scale", s.name), &[s.width], 1.0, false);
            store.insert_zeros(&format!("{}.bn1.shift", s.name), &[s.width], false);
            store.insert_he(&format!("{}.conv2.w", s.name), &[s.width, s.width, 3, 3], false);
            store.insert_zeros(&format!("{}.conv2.b", s.name), &[s.width], false);
            store.insert_const(&format!("{}.bn2.scale", s.name), &[s.width], 1.0, false);
            store.insert_zeros(&format!("{}.bn2.shift", s.name), &[s.width], false);
            // Last conv of the residual branch starts small so fresh blocks
            // are near-identity and the signal survives great depth.
            store.insert_he_scaled(&format!("{}.conv3.w", s.name), &[s.c_out, s.width, 1, 1], 0.1, false);
            store.insert_zeros(&format!("{}.conv3.b", s.name), &[s.c_out], false);
            store.insert_const(&format!("{}.bn3.scale", s.name), &[s.c_out], 1.0, false);
            store.insert_zeros(&format!("{}.bn3.shift", s.name), &[s.c_out], false);
            if s.has_down {
                store.insert_he(&format!("{}.down.conv.w", s.name), &[s.c_out, s.c_in, 1, 1], false);
                store.insert_zeros(&format!("{}.down.conv.b", s.name), &[s.c_out], false);
                store.insert_const(&format!("{}.down.bn.scale", s.name), &[s.c_out], 1.0, false);
                store.insert_zeros(&format!("{}.down.bn.shift", s.name), &[s.c_out], false);
            }
        }
    }

    /// Names of all backbone tensors, used by scope selection and transfer
    /// loading.
    pub fn param_names(&self, store: &ParamStore) -> Vec<String> {
        store
            .names()
            .into_iter()
            .filter(|n| n.starts_with("backbone."))
            .collect()
    }

    fn block_forward(store: &ParamStore, s: &BlockSpec, x: &Array3<f32>) -> (Array3<f32>, BlockCache) {
        let (c1, conv1) = conv2d_forward(store, &format!("{}.conv1", s.name), x, 1, 0);
        let out1 = relu_forward(&frozen_bn_forward(store, &format!("{}.bn1", s.name), &c1));
        let (c2, conv2) = conv2d_forward(store, &format!("{}.conv2", s.name), &out1, s.stride, 1);
        let out2 = relu_forward(&frozen_bn_forward(store, &format!("{}.bn2", s.name), &c2));
        let (c3, conv3) = conv2d_forward(store, &format!("{}.conv3", s.name), &out2, 1, 0);
        let branch = frozen_bn_forward(store, &format!("{}.bn3", s.name), &c3);
        let (identity, down) = if s.has_down {
            let (d, cache) = conv2d_forward(store, &format!("{}.down.conv", s.name), x, s.stride, 0);
            (frozen_bn_forward(store, &format!("{}.down.bn", s.name), &d), Some(cache))
        } else {
            (x.clone(), None)
        };
        let y = relu_forward(&(&branch + &identity));
        (
            y.clone(),
            BlockCache {
                conv1,
                out1,
                conv2,
                out2,
                conv3,
                down,
                y,
            },
        )
    }

    fn block_backward(
        store: &mut ParamStore,
        s: &BlockSpec,
        cache: &BlockCache,
        dy: &Array3<f32>,
        need_dx: bool,
    ) -> Option<Array3<f32>> {
        let dsum = relu_backward(&cache.y, dy);
        // Residual branch.
        let dc3 = frozen_bn_backward(store, &format!("{}.bn3", s.name), &dsum);
        let trainable = store.is_trainable(&format!("{}.conv1.w", s.name));
        let need_inner = need_dx || trainable;
        let dout2 = conv2d_backward(store, &format!("{}.conv3", s.name), &cache.conv3, &dc3, need_inner);
        let mut dx_branch = None;
        if let Some(dout2) = dout2 {
            let d2 = relu_backward(&cache.out2, &dout2);
            let dc2 = frozen_bn_backward(store, &format!("{}.bn2", s.name), &d2);
            if let Some(dout1) = conv2d_backward(store, &format!("{}.conv2", s.name), &cache.conv2, &dc2, need_dx || trainable) {
                let d1 = relu_backward(&cache.out1, &dout1);
                let dc1 = frozen_bn_backward(store, &format!("{}.bn1", s.name), &d1);
                dx_branch = conv2d_backward(store, &format!("{}.conv1", s.name), &cache.conv1, &dc1, need_dx);
            }
        }
        if !need_dx {
            // Still propagate grads into the shortcut projection if any.
            if let Some(down) = &cache.down {
                let dd = frozen_bn_backward(store, &format!("{}.down.bn", s.name), &dsum);
                conv2d_backward(store, &format!("{}.down.conv", s.name), down, &dd, false);
            }
            return None;
        }
        let dx_identity = if let Some(down) = &cache.down {
            let dd = frozen_bn_backward(store, &format!("{}.down.bn", s.name), &dsum);
            conv2d_backward(store, &format!("{}.down.conv", s.name), down, &dd, true).unwrap()
        } else {
            dsum
        };
        Some(match dx_branch {
            Some(b) => b + dx_identity,
            None => dx_identity,
        })
    }

    /// Forward pass: (3,H,W) pixels (already normalized) to the tapped
    /// feature map.
    pub fn forward(&self, store: &ParamStore, x: &Array3<f32>) -> (Array3<f32>, BackboneCache) {
        let (c, stem_conv) = conv2d_forward(store, "backbone.stem.conv", x, 2, 3);
        let stem_out = relu_forward(&frozen_bn_forward(store, "backbone.stem.bn", &c));
        let (mut cur, pool) = maxpool_forward(&stem_out, 3, 2, 1);
        let mut blocks = Vec::new();
        for s in self.blocks() {
            let (y, cache) = Self::block_forward(store, &s, &cur);
            cur = y;
            blocks.push(cache);
        }
        (
            cur,
            BackboneCache {
                stem_conv,
                stem_out,
                pool,
                blocks,
            },
        )
    }

    /// Backward pass: accumulates grads for whatever backbone convs are
    /// trainable. Gradients are not propagated below the shallowest
    /// trainable tensor (the stem input needs no gradient).
    pub fn backward(&self, store: &mut ParamStore, cache: &BackboneCache, dfeat: &Array3<f32>) {
        let specs = self.blocks();
        // Find the first trainable block; anything below it needs no dx.
        let first_trainable = specs
            .iter()
            .position(|s| store.is_trainable(&format!("{}.conv1.w", s.name)))
            .unwrap_or(specs.len());
        let stem_trainable = store.is_trainable("backbone.stem.conv.w");
        let mut d = dfeat.clone();
        for (idx, (s, bc)) in specs.iter().zip(cache.blocks.iter()).enumerate().rev() {
            // dx is needed whenever something below this block (the stem or
            // an earlier block) is trainable.
            let need_dx = stem_trainable || first_trainable < idx;
            match Self::block_backward(store, s, bc, &d, need_dx) {
                Some(dx) => d = dx,
                None => return,
            }
        }
        if stem_trainable {
            let dpool = maxpool_backward(&cache.pool, &d);
            let ds = relu_backward(&cache.stem_out, &dpool);
            let dc = frozen_bn_backward(store, "backbone.stem.bn", &ds);
            conv2d_backward(store, "backbone.stem.conv", &cache.stem_conv, &dc, false);
        }
    }
}
