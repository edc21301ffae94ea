use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The normal-equation system of an ALS or Gibbs update is not positive definite.
    #[error("singular normal equations while updating {factor} (penalty {penalty})")]
    Singular { factor: String, penalty: f64 },

    #[error("kinematics: {0}")]
    Kinematics(String),

    #[error("segmentation: {0}")]
    Segmentation(String),

    #[error("{path}:{row}:{column}: {message}")]
    Parse { path: PathBuf, row: usize, column: String, message: String },

    #[error("format: {0}")]
    Format(String),

    #[error("stream gap of {gap} frames after frame {after}")]
    StreamGap { after: u64, gap: u64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Singular { .. } => ErrorKind::Numeric,
            Error::Shape(_)
            | Error::Kinematics(_)
            | Error::Segmentation(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::StreamGap { .. }
            | Error::Io { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(format!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;
