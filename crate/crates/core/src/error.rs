//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed recording {path}: {reason}")]
    MalformedRecording { path: PathBuf, reason: String },

    #[error("unknown class: {0}")]
    UnknownClass(String),

    #[error("shape mismatch in {context}: {details}")]
    ShapeMismatch { context: String, details: String },

    #[error("cannot fit a normalizer on an empty training set")]
    EmptyTrainingSet,

    #[error("target is not one-hot: {0}")]
    InvalidTarget(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("forward cache does not match the model: {0}")]
    InvalidCache(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(context: &str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch { context: context.to_string(), details: details.into() }
    }
}
