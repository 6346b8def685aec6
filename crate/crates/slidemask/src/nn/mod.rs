//! Minimal CPU neural-network kernels with hand-written backward passes:
//! a named parameter store, im2col convolution, linear layers, frozen
//! batch-norm affines, pooling, and the detection losses.
//!
//! Everything is f32, single-image (the training batch size is 1 and larger
//! batches accumulate gradients), and deterministic: parameter
//! initialization is keyed by (seed, tensor name) so construction order
//! never matters.

mod losses;
mod params;

pub use losses::{bce_with_logits_mean, smooth_l1_mean, softmax_cross_entropy};
pub use params::{init_array, name_hash, ParamStore};

use ndarray::{Array1, Array2, Array3};
#[cfg(test)]
use ndarray::ArrayD;

/// im2col: (C,H,W) input to a (C*kh*kw, OH*OW) patch matrix.
fn im2col(x: &Array3<f32>, kh: usize, kw: usize, stride: usize, pad: usize) -> (Array2<f32>, usize, usize) {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut col = Array2::<f32>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                for oy in 0..oh {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[ci, y as usize, xx as usize]];
                    }
                }
            }
        }
    }
    (col, oh, ow)
}

/// Scatter a (C*kh*kw, OH*OW) gradient back onto the (C,H,W) input.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &Array2<f32>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<f32> {
    let mut dx = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                for oy in 0..oh {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        dx[[ci, y as usize, xx as usize]] += dcol[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    dx
}

pub struct ConvCache {
    col: Array2<f32>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

/// Convolution forward. Weights live in the store as `<name>.w` with shape
/// [C_out, C_in, kh, kw] and bias `<name>.b`.
pub fn conv2d_forward(store: &ParamStore, name: &str, x: &Array3<f32>, stride: usize, pad: usize) -> (Array3<f32>, ConvCache) {
    let w = store.get(&format!("{name}.w"));
    let b = store.get(&format!("{name}.b"));
    let shape = w.shape().to_vec();
    let (c_out, c_in, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(c_in, x.dim().0, "conv {name}: input channels");
    let (col, oh, ow) = im2col(x, kh, kw, stride, pad);
    let w2 = w.to_shape((c_out, c_in * kh * kw)).unwrap().to_owned();
    let mut out2 = w2.dot(&col);
    for (mut row, &bias) in out2.rows_mut().into_iter().zip(b.iter()) {
        row += bias;
    }
    let out = out2.into_shape_with_order((c_out, oh, ow)).unwrap();
    (
        out,
        ConvCache {
            col,
            in_dim: x.dim(),
            out_hw: (oh, ow),
            kh,
            kw,
            stride,
            pad,
        },
    )
}

/// Convolution backward: accumulates weight/bias grads (when trainable) and
/// returns dx when `need_dx`.
pub fn conv2d_backward(
    store: &mut ParamStore,
    name: &str,
    cache: &ConvCache,
    dout: &Array3<f32>,
    need_dx: bool,
) -> Option<Array3<f32>> {
    let (c_out, oh, ow) = dout.dim();
    let dout2 = dout.to_shape((c_out, oh * ow)).unwrap().to_owned();
    let w_name = format!("{name}.w");
    if store.is_trainable(&w_name) {
        let dw2 = dout2.dot(&cache.col.t());
        let db = dout2.sum_axis(ndarray::Axis(1));
        let (c_in, kh, kw) = (cache.in_dim.0, cache.kh, cache.kw);
        store.grad_add(&w_name, dw2.into_shape_with_order((c_out, c_in, kh, kw)).unwrap().into_dyn());
        store.grad_add(&format!("{name}.b"), db.into_dyn());
    }
    if !need_dx {
        return None;
    }
    let w = store.get(&w_name);
    let shape = w.shape().to_vec();
    let w2 = w.to_shape((shape[0], shape[1] * shape[2] * shape[3])).unwrap().to_owned();
    let dcol = w2.t().dot(&dout2);
    let (c, h, w_in) = cache.in_dim;
    Some(col2im(
        &dcol, c, h, w_in, cache.kh, cache.kw, cache.stride, cache.pad, cache.out_hw.0, cache.out_hw.1,
    ))
}

/// Frozen per-channel affine standing in for batch norm. Scale/shift are
/// never trainable.
pub fn frozen_bn_forward(store: &ParamStore, name: &str, x: &Array3<f32>) -> Array3<f32> {
    let scale = store.get(&format!("{name}.scale"));
    let shift = store.get(&format!("{name}.shift"));
    let mut out = x.clone();
    for (ci, mut plane) in out.outer_iter_mut().enumerate() {
        let s = scale[[ci]];
        let t = shift[[ci]];
        plane.mapv_inplace(|v| v * s + t);
    }
    out
}

pub fn frozen_bn_backward(store: &ParamStore, name: &str, dout: &Array3<f32>) -> Array3<f32> {
    let scale = store.get(&format!("{name}.scale"));
    let mut dx = dout.clone();
    for (ci, mut plane) in dx.outer_iter_mut().enumerate() {
        let s = scale[[ci]];
        plane.mapv_inplace(|v| v * s);
    }
    dx
}

pub fn relu_forward(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(out: &Array3<f32>, dout: &Array3<f32>) -> Array3<f32> {
    let mut dx = dout.clone();
    dx.zip_mut_with(out, |d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn relu2_forward(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu2_backward(out: &Array2<f32>, dout: &Array2<f32>) -> Array2<f32> {
    let mut dx = dout.clone();
    dx.zip_mut_with(out, |d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub struct PoolCache {
    argmax: Vec<(usize, usize)>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

/// Max pooling (kernel k, stride s, padding p).
pub fn maxpool_forward(x: &Array3<f32>, k: usize, stride: usize, pad: usize) -> (Array3<f32>, PoolCache) {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    let mut argmax = vec![(0usize, 0usize); c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_yx = (0usize, 0usize);
                for i in 0..k {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for j in 0..k {
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let v = x[[ci, y as usize, xx as usize]];
                        if v > best {
                            best = v;
                            best_yx = (y as usize, xx as usize);
                        }
                    }
                }
                out[[ci, oy, ox]] = best;
                argmax[(ci * oh + oy) * ow + ox] = best_yx;
            }
        }
    }
    (
        out,
        PoolCache {
            argmax,
            in_dim: (c, h, w),
            out_hw: (oh, ow),
        },
    )
}

pub fn maxpool_backward(cache: &PoolCache, dout: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = cache.in_dim;
    let (oh, ow) = cache.out_hw;
    let mut dx = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = cache.argmax[(ci * oh + oy) * ow + ox];
                dx[[ci, y, x]] += dout[[ci, oy, ox]];
            }
        }
    }
    dx
}

pub struct LinearCache {
    x: Array2<f32>,
}

/// Linear layer over row vectors: out = x · Wᵀ + b with W as [out, in].
pub fn linear_forward(store: &ParamStore, name: &str, x: &Array2<f32>) -> (Array2<f32>, LinearCache) {
    let w = store.get(&format!("{name}.w"));
    let b = store.get(&format!("{name}.b"));
    let shape = w.shape().to_vec();
    let w2 = w.to_shape((shape[0], shape[1])).unwrap().to_owned();
    let mut out = x.dot(&w2.t());
    for mut row in out.rows_mut() {
        for (v, &bias) in row.iter_mut().zip(b.iter()) {
            *v += bias;
        }
    }
    (out, LinearCache { x: x.clone() })
}

pub fn linear_backward(
    store: &mut ParamStore,
    name: &str,
    cache: &LinearCache,
    dout: &Array2<f32>,
    need_dx: bool,
) -> Option<Array2<f32>> {
    let w_name = format!("{name}.w");
    if store.is_trainable(&w_name) {
        let dw = dout.t().dot(&cache.x);
        let db: Array1<f32> = dout.sum_axis(ndarray::Axis(0));
        store.grad_add(&w_name, dw.into_dyn());
        store.grad_add(&format!("{name}.b"), db.into_dyn());
    }
    if !need_dx {
        return None;
    }
    let w = store.get(&w_name);
    let shape = w.shape().to_vec();
    let w2 = w.to_shape((shape[0], shape[1])).unwrap().to_owned();
    Some(dout.dot(&w2))
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Global gradient-norm clipping over all trainable grads.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f32) {
    let mut total = 0.0f64;
    for name in store.names() {
        if store.is_trainable(&name) {
            total += store.grad(&name).iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>();
        }
    }
    let norm = total.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for name in store.names() {
            if store.is_trainable(&name) {
                store.grad_scale(&name, scale);
            }
        }
    }
}

/// Finite-difference helper used by the unit tests.
#[cfg(test)]
pub fn numeric_grad(mut f: impl FnMut(&ArrayD<f32>) -> f32, x: &ArrayD<f32>, eps: f32) -> ArrayD<f32> {
    let mut grad = ArrayD::<f32>::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[&idx];
        probe[&idx] = orig + eps;
        let up = f(&probe);
        probe[&idx] = orig - eps;
        let down = f(&probe);
        probe[&idx] = orig;
        grad[&idx] = (up - down) / (2.0 * eps);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn store_with_conv(c_out: usize, c_in: usize, k: usize) -> ParamStore {
        let mut store = ParamStore::new(7);
        store.insert_he("conv.w", &[c_out, c_in, k, k], true);
        store.insert_zeros("conv.b", &[c_out], true);
        store
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut store = ParamStore::new(0);
        let mut w = ArrayD::<f32>::zeros(IxDyn(&[1, 1, 3, 3]));
        w[[0, 0, 1, 1]] = 1.0;
        store.insert_value("conv.w", w, true);
        store.insert_zeros("conv.b", &[1], true);
        let x = Array3::from_shape_fn((1, 5, 5), |(_, y, xx)| (y * 5 + xx) as f32);
        let (out, _) = conv2d_forward(&store, "conv", &x, 1, 1);
        assert_eq!(out, x);
    }

    #[test]
    fn conv_weight_gradient_matches_finite_differences() {
        let mut store = store_with_conv(2, 3, 3);
        let x = {
            let mut rng_v = 0.3f32;
            Array3::from_shape_fn((3, 6, 6), |_| {
                rng_v = (rng_v * 7.13 + 0.31) % 1.0;
                rng_v - 0.5
            })
        };
        // Loss = sum of outputs.
        let (out, cache) = conv2d_forward(&store, "conv", &x, 2, 1);
        let dout = Array3::from_elem(out.dim(), 1.0f32);
        let dx = conv2d_backward(&mut store, "conv", &cache, &dout, true).unwrap();

        let w0 = store.get("conv.w").to_owned();
        let numeric = numeric_grad(
            |w| {
                let mut s2 = store_with_conv(2, 3, 3);
                s2.insert_value("conv.w", w.clone(), true);
                s2.insert_zeros("conv.b", &[2], true);
                conv2d_forward(&s2, "conv", &x, 2, 1).0.sum()
            },
            &w0,
            1e-2,
        );
        let analytic = store.grad("conv.w").to_owned();
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 2e-2, "dW mismatch: {a} vs {n}");
        }

        // dx check against finite differences on the input.
        let numeric_dx = numeric_grad(
            |xi| {
                let x3 = xi.clone().into_dimensionality::<ndarray::Ix3>().unwrap();
                conv2d_forward(&store, "conv", &x3, 2, 1).0.sum()
            },
            &x.clone().into_dyn(),
            1e-2,
        );
        for (a, n) in dx.iter().zip(numeric_dx.iter()) {
            assert!((a - n).abs() < 2e-2, "dx mismatch: {a} vs {n}");
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut store = ParamStore::new(3);
        store.insert_he("fc.w", &[4, 6], true);
        store.insert_zeros("fc.b", &[4], true);
        let x = Array2::from_shape_fn((2, 6), |(i, j)| ((i * 6 + j) as f32 * 0.1) - 0.3);
        let (out, cache) = linear_forward(&store, "fc", &x);
        let dout = Array2::from_elem(out.dim(), 1.0f32);
        let dx = linear_backward(&mut store, "fc", &cache, &dout, true).unwrap();

        let w0 = store.get("fc.w").to_owned();
        let numeric = numeric_grad(
            |w| {
                let mut s2 = ParamStore::new(3);
                s2.insert_value("fc.w", w.clone(), true);
                s2.insert_zeros("fc.b", &[4], true);
                linear_forward(&s2, "fc", &x).0.sum()
            },
            &w0,
            1e-3,
        );
        for (a, n) in store.grad("fc.w").iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-2);
        }
        // dx = dout · W
        let w2 = w0.into_dimensionality::<ndarray::Ix2>().unwrap();
        let expect = dout.dot(&w2);
        assert!(dx.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn maxpool_routes_gradient_to_the_argmax() {
        let mut x = Array3::<f32>::zeros((1, 4, 4));
        x[[0, 1, 1]] = 5.0;
        x[[0, 2, 3]] = 7.0;
        let (out, cache) = maxpool_forward(&x, 2, 2, 0);
        assert_eq!(out[[0, 0, 0]], 5.0);
        assert_eq!(out[[0, 1, 1]], 7.0);
        let dout = Array3::from_elem((1, 2, 2), 1.0f32);
        let dx = maxpool_backward(&cache, &dout);
        assert_eq!(dx[[0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 2, 3]], 1.0);
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn frozen_bn_is_a_per_channel_affine() {
        let mut store = ParamStore::new(0);
        store.insert_value(
            "bn.scale",
            ArrayD::from_shape_vec(IxDyn(&[2]), vec![2.0, 0.5]).unwrap(),
            false,
        );
        store.insert_value(
            "bn.shift",
            ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -1.0]).unwrap(),
            false,
        );
        let x = Array3::from_elem((2, 2, 2), 3.0f32);
        let out = frozen_bn_forward(&store, "bn", &x);
        assert_eq!(out[[0, 0, 0]], 7.0);
        assert_eq!(out[[1, 0, 0]], 0.5);
        let dout = Array3::from_elem((2, 2, 2), 1.0f32);
        let dx = frozen_bn_backward(&store, "bn", &dout);
        assert_eq!(dx[[0, 1, 1]], 2.0);
        assert_eq!(dx[[1, 1, 1]], 0.5);
    }
}
