use std::path::PathBuf;

use ndcore::NdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid record: {0}")]
    Record(String),
    #[error("embedding file {path}: token `{token}` has {found} values, expected {expected}")]
    EmbeddingDim {
        path: String,
        token: String,
        found: usize,
        expected: usize,
    },
    #[error("empty context")]
    EmptyContext,
    #[error("empty persona")]
    EmptyPersona,
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("budget {budget} cannot hold the minimal frame of {needed} tokens")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Mismatch(String),
    /// Carries the parameters from before the failing update.
    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Diverged {
        step: u64,
        checkpoint: Box<crate::harness::ModelCheckpoint>,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
