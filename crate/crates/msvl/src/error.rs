//! Crate-wide error type.
//!
//! Errors are grouped by how a caller should react: `InvalidInput` and
//! `Degenerate` mean the request itself was unusable, `Format` and
//! `Corruption` mean a file or byte stream was, and `NumericFault` means a
//! computation produced a non-finite value and was aborted.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller passed an argument that violates an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file or byte stream does not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// A file matched the format but its contents fail validation.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// The input is structurally valid but the requested statistic or fit is
    /// not defined on it (single-class sample, singular normal equations).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A computation produced a non-finite value and was aborted.
    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors that describe bad data rather than a bad computation.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NumericFault(_))
    }
}
