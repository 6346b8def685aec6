//! RoI Align: quantization-free extraction of a fixed-size grid from a
//! normalized box over a feature map. Each output bin averages a regular
//! grid of bilinear samples; there is no coordinate rounding anywhere.
//!
//! Normalized box coordinates map onto the feature grid with the
//! align-corners convention: y_feat = y_norm * (H - 1).

use ndarray::Array3;

use crate::error::{Error, Result};

/// Normalized (y1, x1, y2, x2), all in [0, 1].
pub type NormBox = [f64; 4];

fn check_box(b: &NormBox) -> Result<()> {
    for &v in b {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::Contract(format!("box coordinate {v} outside [0, 1]")));
        }
    }
    if b[0] >= b[2] || b[1] >= b[3] {
        return Err(Error::Contract(format!(
            "box ({}, {}, {}, {}) has no area",
            b[0], b[1], b[2], b[3]
        )));
    }
    Ok(())
}

fn bilinear(feature: &Array3<f32>, c: usize, y: f64, x: f64) -> f32 {
    let (_, h, w) = feature.dim();
    let yf = y.clamp(0.0, (h - 1) as f64);
    let xf = x.clamp(0.0, (w - 1) as f64);
    let y0 = yf.floor() as usize;
    let x0 = xf.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = (yf - y0 as f64) as f32;
    let fx = (xf - x0 as f64) as f32;
    feature[[c, y0, x0]] * (1.0 - fy) * (1.0 - fx)
        + feature[[c, y0, x1]] * (1.0 - fy) * fx
        + feature[[c, y1, x0]] * fy * (1.0 - fx)
        + feature[[c, y1, x1]] * fy * fx
}

/// Sample positions for one bin along one axis: n regularly spaced points
/// at fractions (k + 0.5)/n of the bin.
fn grid_side(samples_per_bin: usize) -> Result<usize> {
    let n = (samples_per_bin as f64).sqrt().round() as usize;
    if n == 0 || n * n != samples_per_bin {
        return Err(Error::Config(format!(
            "samples_per_bin must be a positive square, got {samples_per_bin}"
        )));
    }
    Ok(n)
}

pub fn roi_align(
    feature: &Array3<f32>,
    rbox: &NormBox,
    output_size: (usize, usize),
    samples_per_bin: usize,
) -> Result<Array3<f32>> {
    check_box(rbox)?;
    let n = grid_side(samples_per_bin)?;
    let (c, h, w) = feature.dim();
    let (oh, ow) = output_size;
    let y_start = rbox[0] * (h - 1) as f64;
    let x_start = rbox[1] * (w - 1) as f64;
    let bin_h = (rbox[2] - rbox[0]) * (h - 1) as f64 / oh as f64;
    let bin_w = (rbox[3] - rbox[1]) * (w - 1) as f64 / ow as f64;
    let inv = 1.0 / (n * n) as f32;
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            for ky in 0..n {
                let y = y_start + (i as f64 + (ky as f64 + 0.5) / n as f64) * bin_h;
                for kx in 0..n {
                    let x = x_start + (j as f64 + (kx as f64 + 0.5) / n as f64) * bin_w;
                    for ch in 0..c {
                        out[[ch, i, j]] += bilinear(feature, ch, y, x) * inv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Scatter the output gradient back onto the feature map through the same
/// bilinear weights.
pub fn roi_align_backward(
    dfeature: &mut Array3<f32>,
    rbox: &NormBox,
    dout: &Array3<f32>,
    samples_per_bin: usize,
) -> Result<()> {
    check_box(rbox)?;
    let n = grid_side(samples_per_bin)?;
    let (c, h, w) = dfeature.dim();
    let (_, oh, ow) = dout.dim();
    let y_start = rbox[0] * (h - 1) as f64;
    let x_start = rbox[1] * (w - 1) as f64;
    let bin_h = (rbox[2] - rbox[0]) * (h - 1) as f64 / oh as f64;
    let bin_w = (rbox[3] - rbox[1]) * (w - 1) as f64 / ow as f64;
    let inv = 1.0 / (n * n) as f32;
    for i in 0..oh {
        for j in 0..ow {
            for ky in 0..n {
                let y = (y_start + (i as f64 + (ky as f64 + 0.5) / n as f64) * bin_h).clamp(0.0, (h - 1) as f64);
                for kx in 0..n {
                    let x =
                        (x_start + (j as f64 + (kx as f64 + 0.5) / n as f64) * bin_w).clamp(0.0, (w - 1) as f64);
                    let y0 = y.floor() as usize;
                    let x0 = x.floor() as usize;
                    let y1 = (y0 + 1).min(h - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let fy = (y - y0 as f64) as f32;
                    let fx = (x - x0 as f64) as f32;
                    for ch in 0..c {
                        let g = dout[[ch, i, j]] * inv;
                        dfeature[[ch, y0, x0]] += g * (1.0 - fy) * (1.0 - fx);
                        dfeature[[ch, y0, x1]] += g * (1.0 - fy) * fx;
                        dfeature[[ch, y1, x0]] += g * fy * (1.0 - fx);
                        dfeature[[ch, y1, x1]] += g * fy * fx;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_feature_gives_constant_output() {
        let feat = Array3::from_elem((2, 6, 6), 3.5f32);
        let out = roi_align(&feat, &[0.1, 0.2, 0.7, 0.9], (3, 3), 4).unwrap();
        assert_eq!(out.dim(), (2, 3, 3));
        assert!(out.iter().all(|&v| (v - 3.5).abs() < 1e-6));
    }

    #[test]
    fn full_frame_2x2_average_matches_dense_oracle() {
        // Values {1,2,3,4}; 1x1 output over the full frame.
        let mut feat = Array3::<f32>::zeros((1, 2, 2));
        feat[[0, 0, 0]] = 1.0;
        feat[[0, 0, 1]] = 2.0;
        feat[[0, 1, 0]] = 3.0;
        feat[[0, 1, 1]] = 4.0;
        let rbox = [0.0, 0.0, 1.0, 1.0];
        let out = roi_align(&feat, &rbox, (1, 1), 4).unwrap();
        // Dense midpoint oracle, 100x100 samples.
        let mut acc = 0.0f64;
        let n = 100;
        for ky in 0..n {
            let y = (ky as f64 + 0.5) / n as f64;
            for kx in 0..n {
                let x = (kx as f64 + 0.5) / n as f64;
                acc += bilinear(&feat, 0, y, x) as f64;
            }
        }
        let oracle = acc / (n * n) as f64;
        assert!((out[[0, 0, 0]] as f64 - oracle).abs() < 1e-5);
        // For a bilinear surface the mean over the unit square is the value
        // at the center: 2.5.
        assert!((out[[0, 0, 0]] - 2.5).abs() < 1e-5);
    }

    #[test]
    fn linear_ramp_left_half_matches_closed_form() {
        // f(x, y) = x over an 8-wide grid, box covering the left half.
        let feat = Array3::from_shape_fn((1, 8, 8), |(_, _, x)| x as f32);
        let rbox = [0.0, 0.0, 1.0, 0.5];
        let out = roi_align(&feat, &rbox, (1, 1), 4).unwrap();
        // x spans [0, 3.5] in feature coords; mean = 1.75.
        assert!((out[[0, 0, 0]] - 1.75).abs() < 1e-5);
    }

    #[test]
    fn output_shape_is_independent_of_box_size() {
        let feat = Array3::from_elem((3, 8, 8), 1.0f32);
        for rbox in [[0.0, 0.0, 0.1, 0.1], [0.2, 0.3, 0.9, 0.95], [0.0, 0.0, 1.0, 1.0]] {
            let out = roi_align(&feat, &rbox, (7, 7), 4).unwrap();
            assert_eq!(out.dim(), (3, 7, 7));
        }
    }

    #[test]
    fn channel_permutation_equivariance() {
        let feat = Array3::from_shape_fn((3, 5, 5), |(c, y, x)| (c * 100 + y * 10 + x) as f32);
        let rbox = [0.1, 0.15, 0.8, 0.9];
        let out = roi_align(&feat, &rbox, (2, 2), 4).unwrap();
        // Permute channels (2, 0, 1) and re-run.
        let perm = [2usize, 0, 1];
        let permuted = Array3::from_shape_fn((3, 5, 5), |(c, y, x)| feat[[perm[c], y, x]]);
        let out_p = roi_align(&permuted, &rbox, (2, 2), 4).unwrap();
        for c in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(out_p[[c, i, j]], out[[perm[c], i, j]]);
                }
            }
        }
    }

    #[test]
    fn empty_box_is_a_contract_error() {
        let feat = Array3::from_elem((1, 4, 4), 1.0f32);
        assert!(roi_align(&feat, &[0.5, 0.2, 0.5, 0.8], (2, 2), 4).is_err());
        assert!(roi_align(&feat, &[0.2, 0.2, 0.1, 0.8], (2, 2), 4).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let feat = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| ((y * 4 + x) as f32 * 0.37).sin());
        let rbox = [0.1, 0.2, 0.85, 0.9];
        let dout = Array3::from_elem((1, 2, 2), 1.0f32);
        let mut dfeat = Array3::<f32>::zeros((1, 4, 4));
        roi_align_backward(&mut dfeat, &rbox, &dout, 4).unwrap();
        let eps = 1e-2f32;
        for y in 0..4 {
            for x in 0..4 {
                let mut up = feat.clone();
                up[[0, y, x]] += eps;
                let mut down = feat.clone();
                down[[0, y, x]] -= eps;
                let fu: f32 = roi_align(&up, &rbox, (2, 2), 4).unwrap().sum();
                let fd: f32 = roi_align(&down, &rbox, (2, 2), 4).unwrap().sum();
                let numeric = (fu - fd) / (2.0 * eps);
                assert!(
                    (dfeat[[0, y, x]] - numeric).abs() < 1e-3,
                    "({y},{x}): {} vs {numeric}",
                    dfeat[[0, y, x]]
                );
            }
        }
    }
}
