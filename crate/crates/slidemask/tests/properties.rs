//! Property-based invariants: geometry, augmentation, metrics, encoding,
//! and split behavior under randomized inputs.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use proptest::prelude::*;

use slidemask::annotation::{point_in_polygon, rasterize_mask, Polygon, Region};
use slidemask::dataset::{augment_pair, make_split, AugmentationConfig};
use slidemask::imageops::{Mask, PixelArray};
use slidemask::inference::{rle_decode, rle_encode};
use slidemask::maskrcnn::roi_align;
use slidemask::metrics::{accuracy, f1, precision, recall, ConfusionCounts, Measure};
use slidemask::taxonomy::ClassLabel;

fn vertices_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..32.0, 0.0f64..32.0), 3..8)
}

fn region(vertices: Vec<(f64, f64)>) -> Option<Region> {
    Polygon::new(vertices).ok().map(|polygon| Region {
        polygon,
        label: ClassLabel::Landslide,
    })
}

proptest! {
    // --- rasterization ---

    /// The scanline fill agrees with an independent per-pixel-center
    /// point-in-polygon test.
    #[test]
    fn rasterization_matches_point_oracle(verts in vertices_strategy()) {
        let Some(r) = region(verts.clone()) else { return Ok(()) };
        let raster = rasterize_mask(&r, 32, 32);
        prop_assume!(!raster.degenerate);
        for y in 0..32usize {
            for x in 0..32usize {
                let inside = point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, &verts);
                prop_assert_eq!(raster.mask[[y, x]], u8::from(inside));
            }
        }
    }

    /// Reversing or cyclically rotating the vertex list leaves the mask
    /// unchanged: the filled region depends on the cycle, not its encoding.
    #[test]
    fn rasterization_is_cycle_invariant(verts in vertices_strategy(), shift in 0usize..8) {
        let Some(r) = region(verts.clone()) else { return Ok(()) };
        let base = rasterize_mask(&r, 32, 32);

        let mut reversed = verts.clone();
        reversed.reverse();
        if let Some(rr) = region(reversed) {
            prop_assert_eq!(&rasterize_mask(&rr, 32, 32).mask, &base.mask);
        }

        let k = shift % verts.len();
        let mut rotated = verts[k..].to_vec();
        rotated.extend_from_slice(&verts[..k]);
        if let Some(rc) = region(rotated) {
            prop_assert_eq!(&rasterize_mask(&rc, 32, 32).mask, &base.mask);
        }
    }

    // --- augmentation ---

    /// Identity augmentation is a bit-exact no-op for any image and mask.
    #[test]
    fn identity_augmentation_is_noop(seed in any::<u64>(), item_seed in any::<u64>()) {
        let image = PixelArray::from_shape_fn((16, 16, 3), |(y, x, c)| ((y * 31 + x * 7 + c) % 256) as f32);
        let mut mask = Mask::zeros((16, 16));
        mask[[4, 5]] = 1;
        mask[[10, 11]] = 1;
        let out = augment_pair(&image, &[mask.clone()], &AugmentationConfig::identity(seed), item_seed, 3).unwrap();
        for (img, masks) in &out {
            prop_assert_eq!(img, &image);
            prop_assert_eq!(&masks[0], &mask);
        }
    }

    /// The augmentation stream is a pure function of (config seed, item seed).
    #[test]
    fn augmentation_is_deterministic(seed in any::<u64>(), item_seed in any::<u64>()) {
        let image = PixelArray::from_shape_fn((16, 16, 3), |(y, x, c)| ((y + 2 * x + 3 * c) % 256) as f32);
        let mut mask = Mask::zeros((16, 16));
        for y in 3..9 { for x in 6..12 { mask[[y, x]] = 1; } }
        let config = AugmentationConfig { seed, ..AugmentationConfig::default() };
        let a = augment_pair(&image, &[mask.clone()], &config, item_seed, 4).unwrap();
        let b = augment_pair(&image, &[mask], &config, item_seed, 4).unwrap();
        prop_assert_eq!(a, b);
    }

    /// A pure horizontal flip is an index mirror: pixel multiset and mask
    /// pixel count are preserved exactly.
    #[test]
    fn flips_preserve_mask_counts(item_seed in any::<u64>()) {
        let image = PixelArray::from_shape_fn((16, 16, 3), |(y, x, c)| ((5 * y + x + c) % 256) as f32);
        let mut mask = Mask::zeros((16, 16));
        for y in 2..7 { for x in 1..13 { mask[[y, x]] = 1; } }
        let count = mask.iter().filter(|&&v| v > 0).count();
        let config = AugmentationConfig { horizontal_flip: 1.0, ..AugmentationConfig::identity(1) };
        for (img, masks) in augment_pair(&image, &[mask], &config, item_seed, 3).unwrap() {
            prop_assert_eq!(masks[0].iter().filter(|&&v| v > 0).count(), count);
            prop_assert_eq!(img.sum(), image.sum());
        }
    }

    // --- metrics ---

    /// F1 is the harmonic mean of precision and recall, so it never exceeds
    /// their arithmetic mean; all four measures stay inside [0, 1].
    #[test]
    fn f1_bounded_by_arithmetic_mean(tp in 0usize..40, fp in 0usize..40, fn_ in 0usize..40, tn in 0usize..40) {
        let c = ConfusionCounts::new(tp, fp, fn_, tn);
        for m in [precision(&c), recall(&c), f1(&c), accuracy(&c)] {
            if let Some(v) = m.value() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        if let (Some(p), Some(r), Some(f)) = (precision(&c).value(), recall(&c).value(), f1(&c).value()) {
            prop_assert!(f <= (p + r) / 2.0 + 1e-12);
        }
    }

    /// Undefined measures appear exactly when a denominator is zero.
    #[test]
    fn measures_are_undefined_iff_denominator_is_zero(tp in 0usize..10, fp in 0usize..10, fn_ in 0usize..10, tn in 0usize..10) {
        let c = ConfusionCounts::new(tp, fp, fn_, tn);
        prop_assert_eq!(precision(&c) == Measure::Undefined, tp + fp == 0);
        prop_assert_eq!(recall(&c) == Measure::Undefined, tp + fn_ == 0);
        prop_assert_eq!(accuracy(&c) == Measure::Undefined, tp + fp + fn_ + tn == 0);
    }

    // --- mask run-length encoding ---

    #[test]
    fn rle_round_trips_any_mask(bits in prop::collection::vec(any::<bool>(), 1..400), w in 1usize..20) {
        let h = bits.len().div_ceil(w);
        let mut flat = vec![0u8; h * w];
        for (i, b) in bits.iter().enumerate() {
            flat[i] = u8::from(*b);
        }
        let mask = Array2::from_shape_vec((h, w), flat).unwrap();
        let runs = rle_encode(&mask);
        prop_assert_eq!(rle_decode(&runs, h, w).unwrap(), mask);
    }

    // --- splits ---

    /// Any split whose counts sum to the corpus is disjoint and covering,
    /// and the same seed reproduces it.
    #[test]
    fn splits_are_disjoint_covering_reproducible(n_train in 1usize..40, n_val in 1usize..20, n_test in 1usize..20, seed in any::<u64>()) {
        let total = n_train + n_val + n_test;
        let ids: Vec<String> = (0..total).map(|i| format!("f{i}")).collect();
        let m = make_split(&ids, (n_train, n_val, n_test), seed, "s").unwrap();
        prop_assert_eq!(make_split(&ids, (n_train, n_val, n_test), seed, "s").unwrap(), m.clone());
        let all: Vec<&String> = m.train.iter().chain(&m.validation).chain(&m.test).collect();
        prop_assert_eq!(all.len(), total);
        let set: BTreeSet<&String> = all.into_iter().collect();
        prop_assert_eq!(set.len(), total);
        prop_assert!(ids.iter().all(|id| set.contains(id)));
    }

    // --- RoI Align ---

    /// Averaging bilinear samples of a constant field gives the constant,
    /// whatever the box.
    #[test]
    fn roi_align_preserves_constants(
        v in -10.0f32..10.0,
        y1 in 0.0f64..0.5, x1 in 0.0f64..0.5,
        dy in 0.1f64..0.5, dx in 0.1f64..0.5,
    ) {
        let feat = Array3::from_elem((2, 6, 6), v);
        let rbox = [y1, x1, (y1 + dy).min(1.0), (x1 + dx).min(1.0)];
        let out = roi_align(&feat, &rbox, (3, 3), 4).unwrap();
        for &o in out.iter() {
            prop_assert!((o - v).abs() < 1e-4);
        }
    }
}
