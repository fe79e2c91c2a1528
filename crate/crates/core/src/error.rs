use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the labeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("inconsistent data: {0}")]
    Data(String),

    #[error("invalid scene spec: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit status: 2 for usage and I/O problems, 3 for bad data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::File { .. } | Error::Io(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
