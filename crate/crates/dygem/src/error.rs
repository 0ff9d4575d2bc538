//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by any layer of the crate.
#[derive(Debug)]
pub enum Error {
    /// Tensor or matrix extents do not line up; the message names both shapes.
    Dimension(String),
    /// Invalid configuration value or unknown configuration key.
    Config(String),
    /// An API precondition was violated by the caller.
    Contract(String),
    /// A text input failed to parse; `line` is 1-based.
    Parse { line: usize, message: String },
    /// Input data is structurally valid but unusable (empty file, single-class labels, ...).
    Data(String),
    /// Rejection sampling exhausted its retry budget.
    Sampling(String),
    /// Training produced a non-finite loss.
    Training {
        epoch: usize,
        timestamp: usize,
        message: String,
    },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Sampling(m) => write!(f, "sampling error: {m}"),
            Error::Training {
                epoch,
                timestamp,
                message,
            } => write!(
                f,
                "training error at epoch {epoch}, timestamp {timestamp}: {message}"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
