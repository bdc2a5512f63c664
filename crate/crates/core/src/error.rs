//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{context}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        context: String,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{context}: mask must contain only 0.0 and 1.0")]
    NonBinaryMask { context: String },

    #[error("kernel size {k} must be odd")]
    EvenKernel { k: usize },

    #[error("ratio {ratio} does not divide dimension {dim} of size {size}")]
    InvalidRatio { dim: usize, size: usize, ratio: usize },

    #[error("spatial shape {shape:?} is not divisible by {divisor} in {context}")]
    IndivisibleShape {
        context: String,
        shape: Vec<usize>,
        divisor: usize,
    },

    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("non-finite gradient for tensor {name}")]
    NanGradient { name: String },

    #[error("undefined surface distance for empty mask ({context})")]
    EmptySurface { context: String },

    #[error("window {window:?} exceeds volume shape {volume:?}")]
    WindowTooLarge {
        window: [usize; 3],
        volume: [usize; 3],
    },

    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: u64, message: String },

    #[error("volume format error in {path}: {message}")]
    VolumeFormat { path: String, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for shape mismatches.
    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
