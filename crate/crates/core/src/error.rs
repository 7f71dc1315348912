use std::path::PathBuf;

use crate::types::PinId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("weighted sampling needs at least one positive weight")]
    AllZeroWeights,

    #[error("invalid sampling weight {0}")]
    InvalidWeight(f64),

    #[error("cluster is empty")]
    EmptyCluster,

    #[error("unknown pin {0}")]
    UnknownPin(PinId),

    #[error("duplicate pin {0}")]
    DuplicatePin(PinId),

    #[error("too many points for clustering: {count} > cap {cap}")]
    TooManyPoints { count: usize, cap: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("event at {event_ts} predates profile version {version}")]
    StaleEvent { event_ts: u64, version: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
