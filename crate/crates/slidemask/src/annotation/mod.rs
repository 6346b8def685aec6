//! VIA annotation ingest: typed region records, polygon rasterization,
//! and coordinate scaling.

mod raster;
mod via;

pub use raster::{point_in_polygon, rasterize_mask, MaskRaster};
pub use via::parse_via;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::ClassLabel;

/// A closed polygon as an ordered vertex list in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Polygon> {
        if vertices.len() < 3 {
            return Err(Error::DegenerateRegion {
                entry: "<unnamed>".into(),
                vertices: vertices.len(),
            });
        }
        for &(x, y) in &vertices {
            if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
                return Err(Error::Contract(format!(
                    "polygon vertex ({x}, {y}) is not finite and non-negative"
                )));
            }
        }
        Ok(Polygon { vertices })
    }

    /// Signed area via the shoelace formula; zero for degenerate polygons.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x1, y1) = self.vertices[i];
            let (x2, y2) = self.vertices[(i + 1) % n];
            acc += x1 * y2 - x2 * y1;
        }
        acc / 2.0
    }

    /// Axis-aligned bounding box as (x_min, y_min, x_max, y_max).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.vertices {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }
}

/// A labelled polygon region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub polygon: Polygon,
    pub label: ClassLabel,
}

/// An image together with its annotated regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub source_path: String,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<Region>,
}

impl AnnotatedImage {
    /// True when at least one region carries the positive class.
    pub fn has_landslide(&self) -> bool {
        self.regions.iter().any(|r| r.label == ClassLabel::Landslide)
    }
}

/// Rescale every vertex by (target_w/width, target_h/height) and update the
/// stored dimensions. Region count and labels are unchanged.
pub fn scale_annotations(image: &AnnotatedImage, target_w: u32, target_h: u32) -> Result<AnnotatedImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Contract("scale target dimensions must be positive".into()));
    }
    let sx = target_w as f64 / image.width as f64;
    let sy = target_h as f64 / image.height as f64;
    let regions = image
        .regions
        .iter()
        .map(|r| Region {
            polygon: Polygon {
                vertices: r.polygon.vertices.iter().map(|&(x, y)| (x * sx, y * sy)).collect(),
            },
            label: r.label,
        })
        .collect();
    Ok(AnnotatedImage {
        image_id: image.image_id.clone(),
        source_path: image.source_path.clone(),
        width: target_w,
        height: target_h,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_image(w: u32, h: u32, verts: Vec<(f64, f64)>) -> AnnotatedImage {
        AnnotatedImage {
            image_id: "img0".into(),
            source_path: "img0.png".into(),
            width: w,
            height: h,
            regions: vec![Region {
                polygon: Polygon::new(verts).unwrap(),
                label: ClassLabel::Landslide,
            }],
        }
    }

    #[test]
    fn identity_scale_keeps_vertices() {
        let img = rect_image(512, 512, vec![(10.0, 20.0), (100.0, 20.0), (100.0, 90.0)]);
        let out = scale_annotations(&img, 512, 512).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn uniform_downscale_halves_vertices() {
        let img = rect_image(1024, 1024, vec![(10.0, 20.0), (100.0, 20.0), (100.0, 90.0)]);
        let out = scale_annotations(&img, 512, 512).unwrap();
        assert_eq!(
            out.regions[0].polygon.vertices,
            vec![(5.0, 10.0), (50.0, 10.0), (50.0, 45.0)]
        );
        assert_eq!((out.width, out.height), (512, 512));
    }

    #[test]
    fn non_uniform_scale_uses_per_axis_ratio() {
        // 640x480 -> 512x512: (320, 240) maps to (256, 256).
        let img = rect_image(640, 480, vec![(320.0, 240.0), (0.0, 0.0), (639.0, 0.0)]);
        let out = scale_annotations(&img, 512, 512).unwrap();
        let (x, y) = out.regions[0].polygon.vertices[0];
        assert_eq!((x, y), (256.0, 256.0));
        assert_eq!(out.regions.len(), img.regions.len());
    }

    #[test]
    fn polygon_needs_three_vertices() {
        assert!(Polygon::new(vec![(0.0, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn polygon_rejects_negative_and_nonfinite() {
        assert!(Polygon::new(vec![(0.0, 0.0), (1.0, -1.0), (2.0, 2.0)]).is_err());
        assert!(Polygon::new(vec![(0.0, 0.0), (f64::NAN, 1.0), (2.0, 2.0)]).is_err());
    }
}
