use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible scene layout: {0}")]
    Infeasible(String),
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("degenerate box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("segmenter failed on box {index}: {source}")]
    Segmenter {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("dataset error at {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
