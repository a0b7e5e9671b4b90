use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite after jitter {0:e}")]
    NotPositiveDefinite(f64),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("effective kernel recursion produced a non-finite value at layer {layer}")]
    NonFiniteRecursion { layer: usize },

    #[error("invalid kernel spec: {0}")]
    InvalidKernel(String),

    #[error("feature bank is empty")]
    EmptyBank,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("neighbor index {index} out of range for bank of {len}")]
    BadNeighbor { index: usize, len: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("cache does not belong to this network state")]
    CacheMismatch,

    #[error("image too small for SSIM: {width}x{height} (need at least 11x11)")]
    TooSmall { width: usize, height: usize },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
