//! Pixel-array primitives shared by the dataset builder and the network:
//! decode/encode, bilinear resize, and affine warps with paired
//! nearest-neighbor mask handling.
//!
//! Images are `Array3<f32>` in (height, width, channel) layout with values
//! in 0..=255; masks are `Array2<u8>`. Resampling uses the half-pixel-center
//! convention: destination pixel d samples source coordinate
//! `(d + 0.5) * scale - 0.5`, clamped to the source grid.

use std::path::Path;

use image::GenericImageView;
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub type PixelArray = Array3<f32>;
pub type Mask = Array2<u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    Constant,
    Reflect,
}

pub fn load_image(path: &Path) -> Result<PixelArray> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = img.dimensions();
    let rgb = img.to_rgb8();
    let mut out = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = p.0[c] as f32;
        }
    }
    Ok(out)
}

pub fn save_png(path: &Path, img: &PixelArray) -> Result<()> {
    let (h, w, c) = img.dim();
    assert_eq!(c, 3, "save_png expects RGB");
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                img[[y, x, 0]].round().clamp(0.0, 255.0) as u8,
                img[[y, x, 1]].round().clamp(0.0, 255.0) as u8,
                img[[y, x, 2]].round().clamp(0.0, 255.0) as u8,
            ]);
            buf.put_pixel(x as u32, y as u32, px);
        }
    }
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Bilinear sample at continuous (x, y), clamped to the image border.
pub fn sample_bilinear(img: &PixelArray, x: f64, y: f64, channel: usize) -> f32 {
    let (h, w, _) = img.dim();
    let xf = x.clamp(0.0, (w - 1) as f64);
    let yf = y.clamp(0.0, (h - 1) as f64);
    let x0 = xf.floor() as usize;
    let y0 = yf.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (xf - x0 as f64) as f32;
    let fy = (yf - y0 as f64) as f32;
    let v00 = img[[y0, x0, channel]];
    let v01 = img[[y0, x1, channel]];
    let v10 = img[[y1, x0, channel]];
    let v11 = img[[y1, x1, channel]];
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Bilinear resize. A same-size resize returns a bitwise-identical copy.
pub fn resize_bilinear(img: &PixelArray, out_h: usize, out_w: usize) -> PixelArray {
    let (h, w, c) = img.dim();
    if out_h == h && out_w == w {
        return img.clone();
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = Array3::<f32>::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        let y = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let x = (ox as f64 + 0.5) * sx - 0.5;
            for ch in 0..c {
                out[[oy, ox, ch]] = sample_bilinear(img, x, y, ch);
            }
        }
    }
    out
}

/// Nearest-neighbor mask resize, keeping values binary.
pub fn resize_nearest_mask(mask: &Mask, out_h: usize, out_w: usize) -> Mask {
    let (h, w) = mask.dim();
    if out_h == h && out_w == w {
        return mask.clone();
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = Array2::<u8>::zeros((out_h, out_w));
    for oy in 0..out_h {
        let y = (((oy as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(h - 1);
        for ox in 0..out_w {
            let x = (((ox as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(w - 1);
            out[[oy, ox]] = mask[[y, x]];
        }
    }
    out
}

/// Exact horizontal mirror (no interpolation).
pub fn flip_horizontal(img: &PixelArray) -> PixelArray {
    let (h, w, c) = img.dim();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[[y, x, ch]] = img[[y, w - 1 - x, ch]];
            }
        }
    }
    out
}

pub fn flip_horizontal_mask(mask: &Mask) -> Mask {
    let (h, w) = mask.dim();
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = mask[[y, w - 1 - x]];
        }
    }
    out
}

/// 2x3 affine mapping from output pixel centers to input coordinates
/// (inverse mapping, column vector [x, y, 1]).
pub type InverseAffine = [[f64; 3]; 2];

fn reflect_coord(v: f64, len: usize) -> f64 {
    // Reflect-101 style without repeating the edge sample.
    let n = len as f64;
    if n <= 1.0 {
        return 0.0;
    }
    let period = 2.0 * (n - 1.0);
    let mut m = (v % period + period) % period;
    if m > n - 1.0 {
        m = period - m;
    }
    m
}

/// Warp an image by the inverse affine map with bilinear interpolation.
pub fn warp_affine_image(img: &PixelArray, inv: &InverseAffine, fill: FillMode) -> PixelArray {
    let (h, w, c) = img.dim();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for oy in 0..h {
        for ox in 0..w {
            let (mut x, mut y) = apply_inverse(inv, ox as f64, oy as f64);
            let inside = x >= -0.5 && x <= w as f64 - 0.5 && y >= -0.5 && y <= h as f64 - 0.5;
            if !inside {
                match fill {
                    FillMode::Constant => continue, // leave zero
                    FillMode::Reflect => {
                        x = reflect_coord(x, w);
                        y = reflect_coord(y, h);
                    }
                }
            }
            for ch in 0..c {
                out[[oy, ox, ch]] = sample_bilinear(img, x, y, ch);
            }
        }
    }
    out
}

/// Warp a mask by the same map with nearest-neighbor sampling; out-of-frame
/// pixels become zero regardless of fill mode so masks never invent area.
pub fn warp_affine_mask(mask: &Mask, inv: &InverseAffine) -> Mask {
    let (h, w) = mask.dim();
    let mut out = Array2::<u8>::zeros((h, w));
    for oy in 0..h {
        for ox in 0..w {
            let (x, y) = apply_inverse(inv, ox as f64, oy as f64);
            let xi = x.round();
            let yi = y.round();
            if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                continue;
            }
            out[[oy, ox]] = mask[[yi as usize, xi as usize]];
        }
    }
    out
}

fn apply_inverse(inv: &InverseAffine, x: f64, y: f64) -> (f64, f64) {
    (
        inv[0][0] * x + inv[0][1] * y + inv[0][2],
        inv[1][0] * x + inv[1][1] * y + inv[1][2],
    )
}

/// Compose the inverse map for a rotation (degrees, about the image center),
/// zoom factor, and shift in pixels. Output->input, so angles and shifts are
/// inverted here.
pub fn inverse_affine(w: usize, h: usize, angle_deg: f64, zoom: f64, shift_x: f64, shift_y: f64) -> InverseAffine {
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let s = 1.0 / zoom;
    // input = C + s * R(-theta) * (output - shift - C)
    let a = s * cos;
    let b = s * sin;
    let tx = -shift_x - cx;
    let ty = -shift_y - cy;
    [
        [a, b, a * tx + b * ty + cx],
        [-b, a, -b * tx + a * ty + cy],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_resize_is_bitwise_identical() {
        let img = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| (y * 31 + x * 7 + c) as f32);
        let out = resize_bilinear(&img, 5, 7);
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_stays_constant_under_resize() {
        let img = Array3::from_elem((768, 1024, 3), 113.0f32);
        let out = resize_bilinear(&img, 512, 512);
        assert_eq!(out.dim(), (512, 512, 3));
        assert!(out.iter().all(|&v| (v - 113.0).abs() < 1e-4));
    }

    #[test]
    fn checkerboard_upscale_matches_hand_computed_weights() {
        // 2x2 checkerboard [[0, 255], [255, 0]] upscaled to 4x4. With
        // half-pixel centers, destination column d samples source
        // x in {-0.25, 0.25, 0.75, 1.25}, clamped to [0, 1]; likewise rows.
        let mut img = Array3::<f32>::zeros((2, 2, 1));
        img[[0, 1, 0]] = 255.0;
        img[[1, 0, 0]] = 255.0;
        let out = resize_bilinear(&img, 4, 4);
        let expected = array![
            [0.0, 63.75, 191.25, 255.0],
            [63.75, 95.625, 159.375, 191.25],
            [191.25, 159.375, 95.625, 63.75],
            [255.0, 191.25, 63.75, 0.0],
        ];
        for y in 0..4 {
            for x in 0..4 {
                assert!(
                    (out[[y, x, 0]] - expected[[y, x]]).abs() < 1e-3,
                    "({y},{x}): got {}, want {}",
                    out[[y, x, 0]],
                    expected[[y, x]]
                );
            }
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = Array3::from_shape_fn((4, 6, 3), |(y, x, c)| (y * 100 + x * 10 + c) as f32);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn identity_affine_warp_preserves_mask() {
        let mut mask = Array2::<u8>::zeros((8, 8));
        mask[[3, 4]] = 1;
        mask[[4, 4]] = 1;
        let inv = inverse_affine(8, 8, 0.0, 1.0, 0.0, 0.0);
        assert_eq!(warp_affine_mask(&mask, &inv), mask);
    }

    #[test]
    fn quarter_rotation_moves_mask_pixels_consistently() {
        let mut mask = Array2::<u8>::zeros((9, 9));
        mask[[1, 7]] = 1;
        let inv = inverse_affine(9, 9, 90.0, 1.0, 0.0, 0.0);
        let rotated = warp_affine_mask(&mask, &inv);
        assert_eq!(rotated.iter().filter(|&&v| v != 0).count(), 1);
    }
}
