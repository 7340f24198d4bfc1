//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by parsing, configuration, and synthesis.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameters, malformed part specs,
    /// inconsistent constraint definitions.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file. Carries the 1-based line where parsing failed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Numeric or degenerate-input failure (e.g. a 6D rotation block that
    /// cannot be orthonormalized, or a zero normalization denominator).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
