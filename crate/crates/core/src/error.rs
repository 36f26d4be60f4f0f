use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AreaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AreaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A local or global iterate became non-finite or exceeded the divergence bound.
    #[error("iterate diverged")]
    Diverged,

    #[error("ingestion error in {file}: {field}: {reason}")]
    Ingest {
        file: String,
        field: &'static str,
        reason: String,
    },

    #[error("rate fit needs at least two positive samples spanning more than one k value")]
    DegenerateFit,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AreaError {
    pub fn config(msg: impl Into<String>) -> Self {
        AreaError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AreaError::Io {
            path: path.into(),
            source,
        }
    }
}
