//! Checkpoint serialization and transfer loading.
//!
//! A checkpoint is a single binary file: magic `SLMK`, format version,
//! a JSON metadata blob (backbone identity, class count, optionally the
//! full training config), then named f32 tensors (little-endian).
//!
//! Transfer loading enforces the contract that the backbone must match
//! exactly (depth, stage layout, widths), while head tensors whose shapes
//! differ — e.g. a checkpoint trained for the 80 COCO foreground classes
//! being adapted to 4 — are left at their fresh initialization and reported.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

use super::model::{build_model, ModelHandle};
use super::TrainConfig;

const MAGIC: &[u8; 4] = b"SLMK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Backbone identity, e.g. "ResNet-101".
    pub backbone: String,
    pub stages_used: usize,
    pub base_width: usize,
    pub num_foreground_classes: usize,
    pub description: String,
    /// Full training config (JSON) when the checkpoint is a saved model
    /// rather than a pretraining artifact.
    #[serde(default)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// Tensors copied verbatim from the checkpoint.
    pub loaded: Vec<String>,
    /// Head tensors whose checkpoint shape did not fit this model and were
    /// left freshly initialized.
    pub reinitialized: Vec<String>,
}

pub fn write_checkpoint(store: &ParamStore, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let meta_json = serde_json::to_vec(meta)?;
    w.write_u32::<LittleEndian>(meta_json.len() as u32)?;
    w.write_all(&meta_json)?;
    let names = store.names();
    w.write_u32::<LittleEndian>(names.len() as u32)?;
    for name in names {
        let bytes = name.as_bytes();
        w.write_u32::<LittleEndian>(bytes.len() as u32)?;
        w.write_all(bytes)?;
        let value = store.get(&name);
        w.write_u32::<LittleEndian>(value.ndim() as u32)?;
        for &d in value.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in value.iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, ArrayD<f32>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.read_u32::<LittleEndian>()? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(r.read_f32::<LittleEndian>()?);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.insert(name, arr);
    }
    Ok((meta, tensors))
}

/// Save a trained model so it can be restored exactly.
pub fn save_model(model: &ModelHandle, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        backbone: model.config.backbone.depth.name().to_string(),
        stages_used: model.config.backbone.stages_used,
        base_width: model.config.extras.base_width,
        num_foreground_classes: model.config.num_foreground_classes,
        description: "trained model".to_string(),
        config: Some(serde_json::to_string(&model.config)?),
    };
    write_checkpoint(&model.store, &meta, path)
}

/// Restore a model saved with `save_model`. Every tensor must be present
/// with a matching shape.
pub fn load_model(path: &Path) -> Result<ModelHandle> {
    let (meta, tensors) = read_checkpoint(path)?;
    let config_json = meta
        .config
        .ok_or_else(|| Error::Checkpoint("checkpoint has no embedded config; not a saved model".into()))?;
    let config: TrainConfig = serde_json::from_str(&config_json)?;
    let mut model = build_model(&config)?;
    for name in model.store.names() {
        let value = tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("saved model is missing tensor {name}")))?;
        if value.shape() != model.store.shape(&name).as_slice() {
            return Err(Error::Checkpoint(format!("saved model tensor {name} has wrong shape")));
        }
        model.store.set(&name, value.clone());
    }
    Ok(model)
}

/// Transfer-load a pretraining checkpoint into a freshly built model.
///
/// Backbone tensors must all be present with identical shapes; a depth or
/// width mismatch is an error. Head tensors are copied when the shapes
/// agree and otherwise left at their fresh initialization, which is how a
/// checkpoint with a different class count adapts.
pub fn load_pretrained(model: &mut ModelHandle, path: &Path) -> Result<LoadReport> {
    let (meta, tensors) = read_checkpoint(path)?;
    let want = model.config.backbone.depth.name();
    if meta.backbone != want {
        return Err(Error::Checkpoint(format!(
            "checkpoint backbone is {} but the model wants {want}",
            meta.backbone
        )));
    }
    if meta.stages_used != model.config.backbone.stages_used || meta.base_width != model.config.extras.base_width {
        return Err(Error::Checkpoint(format!(
            "checkpoint backbone layout (stages {}, width {}) does not match the model (stages {}, width {})",
            meta.stages_used, meta.base_width, model.config.backbone.stages_used, model.config.extras.base_width
        )));
    }
    let mut report = LoadReport::default();
    for name in model.store.names() {
        let want_shape = model.store.shape(&name);
        match tensors.get(&name) {
            Some(value) if value.shape() == want_shape.as_slice() => {
                model.store.set(&name, value.clone());
                report.loaded.push(name);
            }
            other => {
                if name.starts_with("backbone.") {
                    return Err(Error::Checkpoint(match other {
                        Some(v) => format!(
                            "backbone tensor {name} has shape {:?} in the checkpoint but {:?} in the model",
                            v.shape(),
                            want_shape
                        ),
                        None => format!("checkpoint is missing backbone tensor {name}"),
                    }));
                }
                report.reinitialized.push(name);
            }
        }
    }
    // Scope flags may have been clobbered conceptually; reassert them.
    model.apply_scope();
    Ok(report)
}

/// Number of foreground classes in the large-corpus detection benchmark the
/// reference implementation pretrains on.
pub const COCO_FOREGROUND_CLASSES: usize = 80;

/// Write a deterministic stand-in for an 80-class pretraining checkpoint.
///
/// The tensors have exactly the shapes a real pretraining run would
/// produce for this backbone, so transfer loading exercises the same
/// match/mismatch paths. The backbone weights are crafted rather than
/// trained: the stem passes color through its first three channels and the
/// projection shortcuts tile channels, so the frozen feature map remains
/// informative about image content.
pub fn write_synthetic_coco_checkpoint(config: &TrainConfig, path: &Path) -> Result<()> {
    let mut donor_cfg = config.clone();
    donor_cfg.num_foreground_classes = COCO_FOREGROUND_CLASSES;
    donor_cfg.seed = config.seed ^ 0xC0C0_C0C0;
    let mut donor = build_model(&donor_cfg)?;
    craft_backbone(&mut donor);
    let meta = CheckpointMeta {
        backbone: donor_cfg.backbone.depth.name().to_string(),
        stages_used: donor_cfg.backbone.stages_used,
        base_width: donor_cfg.extras.base_width,
        num_foreground_classes: COCO_FOREGROUND_CLASSES,
        description: "synthetic stand-in for an 80-class pretraining checkpoint".to_string(),
        config: None,
    };
    write_checkpoint(&donor.store, &meta, path)
}

/// Overwrite the donor backbone with structured weights: color-passing stem
/// taps plus channel-tiling projection shortcuts.
/// Amplitude of the crafted color taps. Chosen so the frozen feature map
/// has unit-to-few magnitude, which keeps head gradients large enough for
/// low-learning-rate fine-tuning to make visible progress.
const STEM_TAP_GAIN: f32 = 12.0;

fn craft_backbone(model: &mut ModelHandle) {
    let store = &mut model.store;
    // Stem: channels 0..3 are pure center taps on R/G/B, the rest keep a
    // damped random init.
    let shape = store.shape("backbone.stem.conv.w");
    let mut stem = store.get("backbone.stem.conv.w").to_owned();
    stem.mapv_inplace(|v| v * 0.3);
    let (kh, kw) = (shape[2], shape[3]);
    for c in 0..shape[0].min(3) {
        for i in 0..3 {
            stem[[c, i, kh / 2, kw / 2]] = if i == c { STEM_TAP_GAIN } else { 0.0 };
        }
    }
    store.set("backbone.stem.conv.w", stem);
    // Projection shortcuts: identity channel tiling plus a small random
    // perturbation, so each stage roughly preserves the previous one.
    for name in store.names() {
        if !name.ends_with(".down.conv.w") {
            continue;
        }
        let shape = store.shape(&name);
        let mut w = store.get(&name).to_owned();
        w.mapv_inplace(|v| v * 0.05);
        let (c_out, c_in) = (shape[0], shape[1]);
        for o in 0..c_out {
            w[[o, o % c_in, 0, 0]] += 1.0;
        }
        store.set(&name, w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskrcnn::{BackboneDepth, BackboneKind};
    use tempfile::tempdir;

    fn tiny_config(depth: BackboneDepth) -> TrainConfig {
        let mut cfg = TrainConfig {
            backbone: BackboneKind::new(depth),
            seed: 7,
            ..TrainConfig::default()
        };
        cfg.extras.image_size = 64;
        cfg.extras.base_width = 4;
        cfg.extras.head_hidden = 16;
        cfg.extras.mask_channels = 8;
        cfg
    }

    #[test]
    fn checkpoint_round_trips_tensors_and_meta() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build_model(&tiny_config(BackboneDepth::ResNet50)).unwrap();
        save_model(&model, &path).unwrap();
        let restored = load_model(&path).unwrap();
        for name in model.store.names() {
            assert_eq!(model.store.get(&name), restored.store.get(&name), "{name}");
        }
        assert_eq!(restored.config, model.config);
    }

    #[test]
    fn transfer_load_copies_backbone_and_reinits_heads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("coco.ckpt");
        let cfg = tiny_config(BackboneDepth::ResNet50);
        write_synthetic_coco_checkpoint(&cfg, &path).unwrap();
        let mut model = build_model(&cfg).unwrap();
        let before_cls = model.store.get("head.cls.w").to_owned();
        let report = load_pretrained(&mut model, &path).unwrap();
        // All backbone tensors loaded.
        assert!(model
            .store
            .names()
            .iter()
            .filter(|n| n.starts_with("backbone."))
            .all(|n| report.loaded.contains(n)));
        // Class-count-dependent head tensors reinitialized (80 vs 4).
        for n in ["head.cls.w", "head.cls.b", "head.bbox.w", "head.bbox.b", "mask.predict.w", "mask.predict.b"] {
            assert!(report.reinitialized.contains(&n.to_string()), "{n} should be reinitialized");
        }
        // Reinitialized tensors keep the fresh values.
        assert_eq!(model.store.get("head.cls.w"), before_cls.view());
        // Crafted stem made it across.
        let stem = model.store.get("backbone.stem.conv.w");
        assert_eq!(stem[[0, 0, 3, 3]], STEM_TAP_GAIN);
        assert_eq!(stem[[1, 0, 3, 3]], 0.0);
    }

    #[test]
    fn depth_mismatch_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("coco50.ckpt");
        write_synthetic_coco_checkpoint(&tiny_config(BackboneDepth::ResNet50), &path).unwrap();
        let mut model = build_model(&tiny_config(BackboneDepth::ResNet101)).unwrap();
        let err = load_pretrained(&mut model, &path).unwrap_err();
        assert!(err.to_string().contains("ResNet-50"), "{err}");
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("coco.ckpt");
        let cfg = tiny_config(BackboneDepth::ResNet50);
        write_synthetic_coco_checkpoint(&cfg, &path).unwrap();
        let mut wide = cfg.clone();
        wide.extras.base_width = 8;
        let mut model = build_model(&wide).unwrap();
        assert!(load_pretrained(&mut model, &path).is_err());
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
