use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("calibration: missing key `{0}`")]
    MissingKey(String),

    #[error("calibration: key `{key}` has non-numeric value `{value}`")]
    NonNumeric { key: String, value: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("value {value} at index {index} does not fit a 16-bit x256 encoding")]
    Overflow { index: usize, value: f64 },

    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { iteration: usize, term: String },

    #[error("no valid pixels for {0}")]
    Empty(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
