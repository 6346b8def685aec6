//! Polygon-to-mask rasterization.
//!
//! A pixel (x, y) is set iff its center (x + 0.5, y + 0.5) lies inside the
//! polygon under the even-odd rule. Boundary handling is half-open: a
//! crossing at row height `yc` is counted for an edge spanning
//! `min(y1,y2) <= yc < max(y1,y2)`, which keeps counts deterministic and
//! matches a left-to-right ray cast.

use ndarray::Array2;

use super::Region;

/// Rasterization result. `degenerate` flags a zero-area polygon, for which
/// the mask is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRaster {
    pub mask: Array2<u8>,
    pub degenerate: bool,
}

impl MaskRaster {
    pub fn set_pixels(&self) -> usize {
        self.mask.iter().filter(|&&v| v != 0).count()
    }
}

/// Even-odd point-in-polygon test via horizontal ray cast to the right.
pub fn point_in_polygon(px: f64, py: f64, vertices: &[(f64, f64)]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    for i in 0..n {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            let t = (py - y1) / (y2 - y1);
            let xi = x1 + t * (x2 - x1);
            if px < xi {
                inside = !inside;
            }
        }
    }
    inside
}

/// Scanline even-odd fill of the region's polygon into a width x height
/// binary mask (row-major, mask[[y, x]]).
pub fn rasterize_mask(region: &Region, width: u32, height: u32) -> MaskRaster {
    let verts = &region.polygon.vertices;
    let mut mask = Array2::<u8>::zeros((height as usize, width as usize));
    if region.polygon.signed_area() == 0.0 {
        return MaskRaster { mask, degenerate: true };
    }

    let n = verts.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(8);
    for row in 0..height as usize {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (x1, y1) = verts[i];
            let (x2, y2) = verts[(i + 1) % n];
            if (y1 > yc) != (y2 > yc) {
                let t = (yc - y1) / (y2 - y1);
                crossings.push(x1 + t * (x2 - x1));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Fill between crossing pairs: centers with xc in [enter, exit).
        for pair in crossings.chunks_exact(2) {
            let (enter, exit) = (pair[0], pair[1]);
            let first = (enter - 0.5).ceil().max(0.0) as usize;
            for col in first..width as usize {
                let xc = col as f64 + 0.5;
                if xc >= exit {
                    break;
                }
                if xc >= enter {
                    mask[[row, col]] = 1;
                }
            }
        }
    }
    MaskRaster { mask, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Polygon;
    use crate::taxonomy::ClassLabel;

    fn region(verts: Vec<(f64, f64)>) -> Region {
        Region {
            polygon: Polygon::new(verts).unwrap(),
            label: ClassLabel::Landslide,
        }
    }

    #[test]
    fn full_frame_rectangle_is_all_ones() {
        let r = region(vec![(0.0, 0.0), (8.0, 0.0), (8.0, 8.0), (0.0, 8.0)]);
        let out = rasterize_mask(&r, 8, 8);
        assert!(!out.degenerate);
        assert_eq!(out.set_pixels(), 64);
    }

    #[test]
    fn inner_rectangle_sets_sixteen_pixels() {
        let r = region(vec![(2.0, 2.0), (6.0, 2.0), (6.0, 6.0), (2.0, 6.0)]);
        let out = rasterize_mask(&r, 8, 8);
        assert_eq!(out.set_pixels(), 16);
    }

    #[test]
    fn right_triangle_matches_point_oracle() {
        let verts = vec![(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)];
        let r = region(verts.clone());
        let out = rasterize_mask(&r, 8, 8);
        let mut expected = 0usize;
        for y in 0..8 {
            for x in 0..8 {
                if point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, &verts) {
                    expected += 1;
                }
            }
        }
        assert_eq!(out.set_pixels(), expected);
        assert_eq!(expected, 28);
    }

    #[test]
    fn zero_area_polygon_is_flagged_and_empty() {
        let r = region(vec![(1.0, 1.0), (4.0, 4.0), (2.5, 2.5)]);
        let out = rasterize_mask(&r, 8, 8);
        assert!(out.degenerate);
        assert_eq!(out.set_pixels(), 0);
    }

    #[test]
    fn vertex_order_reversal_keeps_pixel_count() {
        let verts = vec![(1.2, 0.7), (6.9, 2.1), (5.5, 6.8), (0.4, 5.0)];
        let fwd = rasterize_mask(&region(verts.clone()), 8, 8);
        let rev = rasterize_mask(&region(verts.into_iter().rev().collect()), 8, 8);
        assert_eq!(fwd.mask, rev.mask);
    }
}
