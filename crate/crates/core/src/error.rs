use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported stride {0} (expected 1 or 2)")]
    Stride(usize),

    #[error("parameter count mismatch: {what} has {got} entries, expected {expected}")]
    ParamCount {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid tiling: {0}")]
    Tiling(String),

    #[error("non-finite or out-of-domain parameter: {0}")]
    Param(String),

    #[error("value {value} outside {dtype} range")]
    Range { value: i64, dtype: &'static str },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trace mismatch: {0}")]
    Trace(String),

    #[error("unknown convention {0:?} (expected raw or tableII)")]
    Convention(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
