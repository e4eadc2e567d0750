//! Error types shared across the engine.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible shapes. Both shapes are named so the
    /// failing call site can be reconstructed from the message alone.
    #[error("shape mismatch in {op}: left is {left}, right is {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    /// An input violates a mathematical precondition (negative weight,
    /// empty matrix, sigma <= 0, ...).
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A required file is missing or unreadable.
    #[error("io error on {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed dataset content, located by file and line.
    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// A feature encoding cannot be applied to this dataset.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// A cross-validation split cannot satisfy its invariants.
    #[error("split error: {0}")]
    Split(String),

    /// A non-finite value surfaced during training; `site` names the first
    /// offending intermediate.
    #[error("non-finite value at {site}")]
    NonFinite { site: String },

    /// Checkpoint container is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Invariant violation that indicates a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}
