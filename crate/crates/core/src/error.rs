use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the indexing engine.
///
/// `Invalid*` variants signal caller input problems; the CLI maps them to a
/// validation exit code. Everything else is an internal or environment failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("video `{video_id}` is not ready ({readiness})")]
    NotReady { video_id: String, readiness: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("missing artifact: {0}")]
    Missing(String),

    #[error("external decoder failed: {0}")]
    Decoder(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }

    /// True when the error stems from caller-supplied data rather than the
    /// environment or a bug.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidArgument { .. }
                | Error::NotReady { .. }
                | Error::DimensionMismatch { .. }
                | Error::Format { .. }
                | Error::Undefined(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
