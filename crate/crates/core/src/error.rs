use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: bad file format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    Truncation {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row} has norm {norm:e}, cannot be normalized")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("label {value} at position {index} is out of range for {classes} classes")]
    LabelRange {
        index: usize,
        value: usize,
        classes: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("cannot construct synthetic model: {0}")]
    Construction(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Construction(_) => ErrorKind::Config,
            Error::Numerics(_) => ErrorKind::Numerics,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerics,
}
