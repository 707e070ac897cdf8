use std::path::PathBuf;

use crate::CategoryId;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("category {0} has no features")]
    EmptyCategory(CategoryId),

    #[error("duplicate category {0}")]
    DuplicateCategory(CategoryId),

    #[error("no old categories to perturb against")]
    NoOldCategories,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("feature store is empty")]
    NoOldKnowledge,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("average precision undefined for category {0}: no positives")]
    UndefinedAp(CategoryId),

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}
