//! Dataset building: paired image/mask augmentation and seeded
//! train/validation/test splits with a persisted manifest.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{
    flip_horizontal, flip_horizontal_mask, inverse_affine, warp_affine_image, warp_affine_mask,
    FillMode, Mask, PixelArray,
};

/// Geometric augmentation parameters. The defaults mirror the flip/rotation
/// magnitudes visible in typical UAV augmentation output and are all
/// overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Probability of a horizontal mirror.
    pub horizontal_flip: f64,
    /// Rotation sampled uniformly from +-rotation_range degrees.
    pub rotation_range: f64,
    /// Shift sampled per axis from +-shift_range, as a fraction of the side.
    pub shift_range: f64,
    /// Zoom factor sampled from [1 - zoom_range, 1 + zoom_range].
    pub zoom_range: f64,
    pub fill_mode: String,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            horizontal_flip: 0.5,
            rotation_range: 15.0,
            shift_range: 0.10,
            zoom_range: 0.10,
            fill_mode: "constant".into(),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn identity(seed: u64) -> Self {
        AugmentationConfig {
            horizontal_flip: 0.0,
            rotation_range: 0.0,
            shift_range: 0.0,
            zoom_range: 0.0,
            fill_mode: "constant".into(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip) {
            return Err(Error::Config("horizontal_flip must lie in [0, 1]".into()));
        }
        if self.rotation_range < 0.0 || self.shift_range < 0.0 || self.zoom_range < 0.0 {
            return Err(Error::Config("augmentation ranges must be non-negative".into()));
        }
        match self.fill_mode.as_str() {
            "constant" | "reflect" => Ok(()),
            other => Err(Error::Config(format!("unknown fill_mode {other:?}"))),
        }
    }

    fn fill(&self) -> FillMode {
        if self.fill_mode == "reflect" {
            FillMode::Reflect
        } else {
            FillMode::Constant
        }
    }
}

/// One sampled geometric transform, applied identically to image and masks.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SampledTransform {
    flip: bool,
    angle_deg: f64,
    zoom: f64,
    shift_x: f64,
    shift_y: f64,
}

impl SampledTransform {
    fn is_pure_flip_or_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.zoom == 1.0 && self.shift_x == 0.0 && self.shift_y == 0.0
    }
}

fn sample_transform(rng: &mut ChaCha8Rng, config: &AugmentationConfig, w: usize, h: usize) -> SampledTransform {
    let flip = match config.horizontal_flip {
        p if p <= 0.0 => false,
        p if p >= 1.0 => true,
        p => rng.gen::<f64>() < p,
    };
    let angle_deg = if config.rotation_range > 0.0 {
        rng.gen_range(-config.rotation_range..=config.rotation_range)
    } else {
        0.0
    };
    let zoom = if config.zoom_range > 0.0 {
        rng.gen_range(1.0 - config.zoom_range..=1.0 + config.zoom_range)
    } else {
        1.0
    };
    let (shift_x, shift_y) = if config.shift_range > 0.0 {
        (
            rng.gen_range(-config.shift_range..=config.shift_range) * w as f64,
            rng.gen_range(-config.shift_range..=config.shift_range) * h as f64,
        )
    } else {
        (0.0, 0.0)
    };
    SampledTransform { flip, angle_deg, zoom, shift_x, shift_y }
}

/// Apply `count` independently sampled transforms to an image and its
/// per-region masks. Deterministic given (config.seed, item_seed): the RNG
/// stream depends on both and on nothing else.
pub fn augment_pair(
    image: &PixelArray,
    masks: &[Mask],
    config: &AugmentationConfig,
    item_seed: u64,
    count: usize,
) -> Result<Vec<(PixelArray, Vec<Mask>)>> {
    config.validate()?;
    let (h, w, _) = image.dim();
    for (i, m) in masks.iter().enumerate() {
        if m.dim() != (h, w) {
            return Err(Error::Contract(format!(
                "mask {i} has shape {:?} but the image is {h}x{w}",
                m.dim()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ item_seed.rotate_left(17));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = sample_transform(&mut rng, config, w, h);
        out.push(apply_transform(image, masks, &t, config.fill()));
    }
    Ok(out)
}

fn apply_transform(
    image: &PixelArray,
    masks: &[Mask],
    t: &SampledTransform,
    fill: FillMode,
) -> (PixelArray, Vec<Mask>) {
    if t.is_pure_flip_or_identity() {
        // Exact path: a flip is an index mirror, the identity is a copy.
        return if t.flip {
            (
                flip_horizontal(image),
                masks.iter().map(flip_horizontal_mask).collect(),
            )
        } else {
            (image.clone(), masks.to_vec())
        };
    }
    let (h, w, _) = image.dim();
    let inv = inverse_affine(w, h, t.angle_deg, t.zoom, t.shift_x, t.shift_y);
    let mut img = warp_affine_image(image, &inv, fill);
    let mut out_masks: Vec<Mask> = masks.iter().map(|m| warp_affine_mask(m, &inv)).collect();
    if t.flip {
        img = flip_horizontal(&img);
        out_masks = out_masks.iter().map(flip_horizontal_mask).collect();
    }
    (img, out_masks)
}

/// Persisted split membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub set_name: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::ManifestSchema(format!(
                    "image id {id:?} appears in more than one split"
                )));
            }
        }
        Ok(())
    }

    /// Verify the manifest covers exactly `ids`, naming any discrepancy.
    pub fn check_coverage<'a, I: IntoIterator<Item = &'a String>>(&self, ids: I) -> Result<()> {
        let expected: BTreeSet<&String> = ids.into_iter().collect();
        let actual: BTreeSet<&String> = self.train.iter().chain(&self.validation).chain(&self.test).collect();
        if let Some(missing) = expected.difference(&actual).next() {
            return Err(Error::ManifestSchema(format!(
                "dataset id {missing:?} is missing from the manifest"
            )));
        }
        if let Some(extra) = actual.difference(&expected).next() {
            return Err(Error::ManifestSchema(format!(
                "manifest id {extra:?} is not part of the dataset"
            )));
        }
        Ok(())
    }
}

/// Partition ids into (train, validation, test) by a seeded shuffle.
pub fn make_split(ids: &[String], counts: (usize, usize, usize), seed: u64, set_name: &str) -> Result<SplitManifest> {
    let (n_train, n_val, n_test) = counts;
    let requested = n_train + n_val + n_test;
    if requested != ids.len() {
        return Err(Error::SplitCounts {
            requested,
            available: ids.len(),
        });
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let validation = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(SplitManifest {
        set_name: set_name.to_string(),
        seed,
        train: shuffled,
        validation: val,
        test: validation,
    })
}

/// Stratified variant: positives and negatives are split proportionally so
/// small datasets keep both kinds in every split.
pub fn make_split_stratified(
    ids: &[String],
    is_positive: impl Fn(&str) -> bool,
    counts: (usize, usize, usize),
    seed: u64,
    set_name: &str,
) -> Result<SplitManifest> {
    let (n_train, n_val, n_test) = counts;
    if n_train + n_val + n_test != ids.len() {
        return Err(Error::SplitCounts {
            requested: n_train + n_val + n_test,
            available: ids.len(),
        });
    }
    let mut pos: Vec<String> = ids.iter().filter(|id| is_positive(id)).cloned().collect();
    let mut neg: Vec<String> = ids.iter().filter(|id| !is_positive(id)).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    // Allocate positives per split by largest remainder, then fill with
    // negatives up to the requested counts.
    let total = ids.len() as f64;
    let quotas = [n_train, n_val, n_test];
    let mut pos_take = [0usize; 3];
    let mut rema: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (i, &q) in quotas.iter().enumerate() {
        let exact = pos.len() as f64 * q as f64 / total;
        pos_take[i] = (exact.floor() as usize).min(q);
        assigned += pos_take[i];
        rema.push((i, exact - exact.floor()));
    }
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = pos.len() - assigned;
    for (i, _) in rema {
        if leftover == 0 {
            break;
        }
        if pos_take[i] < quotas[i] {
            pos_take[i] += 1;
            leftover -= 1;
        }
    }

    let mut splits: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut pos_iter = pos.into_iter();
    let mut neg_iter = neg.into_iter();
    for i in 0..3 {
        for _ in 0..pos_take[i] {
            splits[i].push(pos_iter.next().unwrap());
        }
        while splits[i].len() < quotas[i] {
            match neg_iter.next() {
                Some(id) => splits[i].push(id),
                None => splits[i].push(pos_iter.next().expect("counts sum to len")),
            }
        }
    }
    let [train, validation, test] = splits;
    Ok(SplitManifest {
        set_name: set_name.to_string(),
        seed,
        train,
        validation,
        test,
    })
}

pub fn write_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    manifest.check_disjoint()?;
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json("serializing manifest", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
}

pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let manifest: SplitManifest =
        serde_json::from_str(&text).map_err(|e| Error::ManifestSchema(e.to_string()))?;
    manifest.check_disjoint()?;
    Ok(manifest)
}
