use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("log domain error: rotation angle {angle} rad is at or beyond the cutoff")]
    Domain { angle: f64 },

    #[error("cheirality violation: point at depth {depth} is not in front of the camera")]
    Cheirality { depth: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class.
    ///
    /// 2 usage/argument, 3 I/O or file format, 4 numerical degeneracy,
    /// 5 insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 2,
            Error::Io { .. } | Error::Format(_) => 3,
            Error::Domain { .. } | Error::Cheirality { .. } | Error::Degenerate(_) => 4,
            Error::InsufficientData(_) => 5,
        }
    }
}
