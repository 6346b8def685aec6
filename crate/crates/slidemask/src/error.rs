//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation document ({entry}): {message}")]
    Parse { entry: String, message: String },

    #[error("unknown class name {0:?}; expected one of Landslide, Vegetation, WaterBody, Building, Background")]
    Taxonomy(String),

    #[error("degenerate region in {entry}: polygon has {vertices} vertices (need at least 3)")]
    DegenerateRegion { entry: String, vertices: usize },

    #[error("split counts sum to {requested} but the dataset holds {available} ids")]
    SplitCounts { requested: usize, available: usize },

    #[error("manifest schema violation: {0}")]
    ManifestSchema(String),

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("fetch failed (retryable): {0}")]
    Fetch(String),

    #[error("triage worksheet references unknown path {0}")]
    UnknownWorksheetPath(String),

    #[error("no ground-truth entry for image id {0:?}")]
    MissingTruth(String),

    #[error("run id {0:?} already exists; runs are append-only")]
    RunExists(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::io("io error", source)
    }
}

impl From<serde_json::Error> for Error {
    fn from(source: serde_json::Error) -> Self {
        Error::json("json error", source)
    }
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Exit code class: 4 for divergence, 3 for every other module error.
    /// Usage errors exit 2 via the argument parser before reaching here.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
