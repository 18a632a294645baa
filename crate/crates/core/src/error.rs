use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported container format {found:?} (expected {expected:?})")]
    UnsupportedVersion {
        found: String,
        expected: &'static str,
    },

    #[error("unsupported dtype {found:?} (expected {expected:?})")]
    UnsupportedDtype {
        found: String,
        expected: &'static str,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input is well-formed but the statistic is undefined on it
    /// (zero variance, no valid cells, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    ///
    /// 2 validation, 3 dimension mismatch, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv(_) => 4,
            Error::DimensionMismatch { .. } => 3,
            Error::Manifest { .. }
            | Error::UnsupportedVersion { .. }
            | Error::UnsupportedDtype { .. }
            | Error::ShapeMismatch(_)
            | Error::Validation(_)
            | Error::InvalidArgument(_)
            | Error::Degenerate(_) => 2,
        }
    }
}
