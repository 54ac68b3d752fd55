//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A run or model configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A dataset file is missing or failed to parse.
    #[error("ingestion error at {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    /// Array shapes do not line up with the configured pipeline.
    #[error("shape error: {0}")]
    Shape(String),

    /// A statistic is undefined on the given input (e.g. zero variance).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    /// Checkpoint file is corrupt or does not match the architecture.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The external codec adapter is missing or misbehaved.
    #[error("codec adapter unavailable: {0}")]
    CodecUnavailable(String),

    /// Training diverged (NaN/inf loss).
    #[error("numeric failure at step {step}: {reason}")]
    Numeric { step: usize, reason: String },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
