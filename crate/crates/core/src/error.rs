//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric operation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Vocabulary construction or lookup failed.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// A dataset record is malformed.
    #[error("invalid record at line {line}: {message}")]
    Record { line: usize, message: String },

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A capture or patch request cannot be honored by the forward pass.
    #[error("intervention error: {0}")]
    Intervention(String),

    /// A patching precondition does not hold for the given prompt pair.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// An aggregate was requested over zero qualifying inputs.
    #[error("empty cohort: {0}")]
    EmptyCohort(String),

    /// Training failed (divergence, invalid schedule, ...).
    #[error("training error: {0}")]
    Train(String),

    /// A checkpoint file is unreadable or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
