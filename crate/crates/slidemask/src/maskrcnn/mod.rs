//! Mask R-CNN with a residual backbone: model construction, transfer
//! loading from a COCO-shaped checkpoint, RoI Align, head training with
//! frozen-stage scopes, and raw detection.

pub mod anchors;
pub mod backbone;
pub mod checkpoint;
pub mod heads;
pub mod model;
pub mod roi_align;
pub mod rpn;
pub mod targets;
pub mod train;

pub use checkpoint::{load_pretrained, write_synthetic_coco_checkpoint, LoadReport};
pub use model::{build_model, ModelHandle};
pub use roi_align::roi_align;
pub use train::{train, EpochLossRecord, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneDepth {
    ResNet50,
    ResNet101,
}

impl BackboneDepth {
    pub fn layer_count(self) -> usize {
        match self {
            BackboneDepth::ResNet50 => 50,
            BackboneDepth::ResNet101 => 101,
        }
    }

    /// Bottleneck block counts for stages 2..=5.
    pub fn block_counts(self) -> [usize; 4] {
        match self {
            BackboneDepth::ResNet50 => [3, 4, 6, 3],
            BackboneDepth::ResNet101 => [3, 4, 23, 3],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneDepth::ResNet50 => "ResNet-50",
            BackboneDepth::ResNet101 => "ResNet-101",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneKind {
    pub depth: BackboneDepth,
    /// Stages tapped for features; 4 means the feature map comes from
    /// stage 4 (stride 16) and stage 5 is not built.
    pub stages_used: usize,
}

impl BackboneKind {
    pub fn new(depth: BackboneDepth) -> Self {
        BackboneKind { depth, stages_used: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.stages_used) {
            return Err(Error::Config(format!(
                "stages_used must lie in 1..=5, got {}",
                self.stages_used
            )));
        }
        Ok(())
    }

    /// Feature-map stride after the tapped stage.
    pub fn feature_stride(&self) -> usize {
        // stem -> /4, each later stage doubles.
        match self.stages_used {
            1 => 4,
            s => 4 << (s - 2).min(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableScope {
    HeadsOnly,
    HeadsAndStage5,
    All,
}

/// Architecture and solver knobs the paper leaves at reference defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelExtras {
    /// Square network input resolution.
    pub image_size: usize,
    /// Stem channel width; 64 reproduces the full-width backbone, smaller
    /// values scale every stage proportionally for CPU-scale runs.
    pub base_width: usize,
    pub momentum: f64,
    pub grad_clip_norm: f64,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub rpn_nms_iou: f64,
    pub rpn_pre_nms_top_n: usize,
    pub rpn_post_nms_train: usize,
    pub rpn_post_nms_infer: usize,
    /// Advanced knob: RPN objectness cutoff applied before proposal NMS.
    pub rpn_objectness_threshold: f64,
    pub rpn_batch: usize,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    pub roi_batch: usize,
    pub roi_positive_fraction: f64,
    pub roi_positive_iou: f64,
    pub detection_nms_iou: f64,
    pub samples_per_bin: usize,
    pub roi_pool_size: usize,
    pub mask_pool_size: usize,
    pub head_hidden: usize,
    pub mask_channels: usize,
    /// Online augmentation of training items (identity when None).
    pub augment: Option<crate::dataset::AugmentationConfig>,
}

impl Default for ModelExtras {
    fn default() -> Self {
        ModelExtras {
            image_size: 512,
            base_width: 16,
            momentum: 0.9,
            grad_clip_norm: 5.0,
            anchor_scales: vec![32.0, 64.0, 128.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            rpn_nms_iou: 0.7,
            rpn_pre_nms_top_n: 600,
            rpn_post_nms_train: 64,
            rpn_post_nms_infer: 50,
            rpn_objectness_threshold: 0.0,
            rpn_batch: 64,
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            roi_batch: 32,
            roi_positive_fraction: 0.5,
            roi_positive_iou: 0.5,
            detection_nms_iou: 0.3,
            samples_per_bin: 4,
            roi_pool_size: 7,
            mask_pool_size: 14,
            head_hidden: 256,
            mask_channels: 32,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub backbone: BackboneKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Foreground classes; background is modelled implicitly, so annotated
    /// Background polygons are dropped at training time with a warning.
    pub num_foreground_classes: usize,
    pub trainable_scope: TrainableScope,
    pub seed: u64,
    pub extras: ModelExtras,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            backbone: BackboneKind::new(BackboneDepth::ResNet101),
            learning_rate: 0.001,
            epochs: 20,
            batch_size: 1,
            num_foreground_classes: 4,
            trainable_scope: TrainableScope::HeadsOnly,
            seed: 0,
            extras: ModelExtras::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.num_foreground_classes == 0 {
            return Err(Error::Config("need at least one foreground class".into()));
        }
        let n = (self.extras.samples_per_bin as f64).sqrt().round() as usize;
        if n * n != self.extras.samples_per_bin || n == 0 {
            return Err(Error::Config(format!(
                "samples_per_bin must be a positive square, got {}",
                self.extras.samples_per_bin
            )));
        }
        if self.extras.image_size < 32 {
            return Err(Error::Config("image_size must be at least 32".into()));
        }
        Ok(())
    }
}
