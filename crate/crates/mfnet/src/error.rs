//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernel, graph, serialization, and training code.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up (input vs. weight vs. declared spec).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is invalid (divisibility, ranges, windows).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An API contract was violated (wrong call order, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two graphs or a graph and a checkpoint disagree structurally.
    #[error("structural mismatch: {0}")]
    Structure(String),

    /// Text config could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A checkpoint file is truncated or malformed.
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }
}
