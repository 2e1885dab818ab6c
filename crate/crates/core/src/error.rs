use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("image {path} has {found} channels, expected 3 (RGB)")]
    ChannelCount { path: PathBuf, found: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("bounding box {x},{y} {w}x{h} does not fit a {width}x{height} image (min extent 8)")]
    BoxOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("network spec invalid at layer {layer}: {message}")]
    NetworkSpec { layer: usize, message: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("subject {0} has no variants")]
    NoVariants(String),

    #[error("training config invalid: {0}")]
    Config(String),

    #[error("loss diverged at {stage} iteration {iteration}: {value}")]
    Divergence {
        stage: &'static str,
        iteration: usize,
        value: f64,
    },

    #[error("checkpoint format version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("missing quality for image ids: {0:?}")]
    MissingQuality(Vec<String>),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
