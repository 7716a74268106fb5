use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid class index {class} (model has {classes} classes)")]
    InvalidClass { class: usize, classes: usize },

    #[error("start point lies on a decision boundary (classified as 0)")]
    BoundaryStart,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("no certified stationary point found")]
    NotFound,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
