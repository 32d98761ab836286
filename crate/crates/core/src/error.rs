use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("worker reported error: {0}")]
    Worker(String),

    #[error("timed out after {0:?} waiting for worker")]
    Timeout(std::time::Duration),

    #[error("failed to spawn worker `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("denoiser failed at t={t}: {source}")]
    Backend {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that originate in a denoiser backend rather than in
    /// the caller's inputs.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend { .. }
                | Error::Protocol(_)
                | Error::Worker(_)
                | Error::Timeout(_)
                | Error::Spawn { .. }
        )
    }
}
