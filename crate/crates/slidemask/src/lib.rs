//! Landslide detection from UAV photographs: VIA annotation ingest, dataset
//! building with deterministic augmentation and splits, Mask R-CNN transfer
//! learning on a residual backbone, thresholded inference with overlay
//! rendering, and Precision/Recall/F1/Accuracy reporting.

pub mod acquisition;
pub mod annotation;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod imageops;
pub mod inference;
pub mod maskrcnn;
pub mod metrics;
pub mod nn;
pub mod synthetic;
pub mod taxonomy;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
