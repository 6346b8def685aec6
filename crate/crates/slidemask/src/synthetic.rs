//! Deterministic synthetic fixture generator: textured terrain images with
//! elliptical bare-earth "landslide" blobs whose exact masks are known to
//! the generator. Used by smoke tests and as an offline stand-in corpus for
//! the acquisition provider.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::Result;
use crate::imageops::{save_png, Mask, PixelArray};

/// One generated image with its generator-known ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticItem {
    pub id: String,
    /// (size, size, 3) pixels in 0..255.
    pub image: PixelArray,
    /// Exact landslide mask; all zero for negative items.
    pub mask: Mask,
    pub has_landslide: bool,
    /// Ellipse boundary polygon (x, y), clockwise, for annotation fixtures.
    /// Empty for negative items.
    pub polygon: Vec<(f64, f64)>,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    fn boundary(&self, points: usize) -> Vec<(f64, f64)> {
        let (s, c) = self.angle.sin_cos();
        (0..points)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
                let u = self.rx * t.cos();
                let v = self.ry * t.sin();
                (self.cx + c * u - s * v, self.cy + s * u + c * v)
            })
            .collect()
    }
}

/// Low-frequency pseudo-terrain value in [0, 1].
fn terrain(y: f64, x: f64, phase: f64) -> f64 {
    let a = ((x * 0.045 + phase).sin() + (y * 0.06 - phase * 0.7).cos()) * 0.25;
    let b = ((x * 0.11 - y * 0.09 + phase * 2.1).sin()) * 0.15;
    0.5 + a + b
}

/// Generate `count` images of side `size`; the last `negatives` of them
/// contain no landslide. Deterministic in `seed`.
pub fn generate_dataset(count: usize, negatives: usize, size: usize, seed: u64) -> Vec<SyntheticItem> {
    (0..count)
        .map(|i| {
            let positive = i + negatives < count;
            generate_item(&format!("synthetic_{i:03}"), size, seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9), positive)
        })
        .collect()
}

fn generate_item(id: &str, size: usize, seed: u64, with_landslide: bool) -> SyntheticItem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = size as f64;
    let ellipse = Ellipse {
        cy: rng.gen_range(0.3 * s..0.7 * s),
        cx: rng.gen_range(0.3 * s..0.7 * s),
        ry: rng.gen_range(0.12 * s..0.20 * s),
        rx: rng.gen_range(0.14 * s..0.24 * s),
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    };
    let mut image = PixelArray::zeros((size, size, 3));
    let mut mask = Mask::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            let t = terrain(y as f64, x as f64, phase);
            let noise: f64 = rng.gen_range(-10.0..10.0);
            // Vegetation green shading into gray rock on high terrain.
            let (mut r, mut g, mut b) = (
                40.0 + 60.0 * t + noise,
                95.0 + 70.0 * t + noise,
                45.0 + 40.0 * t + noise,
            );
            if with_landslide && ellipse.contains(y as f64 + 0.5, x as f64 + 0.5) {
                mask[[y, x]] = 1;
                // Exposed earth: strong red/brown against the green terrain.
                r = 165.0 + 30.0 * t + noise;
                g = 105.0 + 20.0 * t + noise;
                b = 55.0 + 15.0 * t + noise;
            }
            image[[y, x, 0]] = r.clamp(0.0, 255.0) as f32;
            image[[y, x, 1]] = g.clamp(0.0, 255.0) as f32;
            image[[y, x, 2]] = b.clamp(0.0, 255.0) as f32;
        }
    }
    let polygon = if with_landslide { ellipse.boundary(24) } else { Vec::new() };
    SyntheticItem {
        id: id.to_string(),
        image,
        mask,
        has_landslide: with_landslide,
        polygon,
    }
}

/// Write the items as a VIA-style project: `images/<id>.png` plus
/// `annotations.json` with one Landslide polygon per positive item.
/// Returns the annotation file path.
pub fn write_via_fixture(dir: &Path, items: &[SyntheticItem]) -> Result<PathBuf> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir)?;
    let mut metadata = serde_json::Map::new();
    for item in items {
        let filename = format!("{}.png", item.id);
        save_png(&image_dir.join(&filename), &item.image)?;
        let (h, w, _) = item.image.dim();
        let mut regions = Vec::new();
        if item.has_landslide {
            let xs: Vec<i64> = item.polygon.iter().map(|&(x, _)| x.round() as i64).collect();
            let ys: Vec<i64> = item.polygon.iter().map(|&(_, y)| y.round() as i64).collect();
            regions.push(json!({
                "shape_attributes": {"name": "polygon", "all_points_x": xs, "all_points_y": ys},
                "region_attributes": {"class": "Landslide"}
            }));
        }
        metadata.insert(
            filename.clone(),
            json!({
                "filename": filename,
                "size": 0,
                "regions": regions,
                "file_attributes": {"width": w, "height": h}
            }),
        );
    }
    let doc = json!({ "_via_img_metadata": metadata });
    let path = dir.join("annotations.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

/// Intersection-over-union of two binary masks.
pub fn mask_iou(a: &Array2<u8>, b: &Array2<u8>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "mask shapes differ");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let xa = x > 0;
        let yb = y > 0;
        if xa && yb {
            inter += 1;
        }
        if xa || yb {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
