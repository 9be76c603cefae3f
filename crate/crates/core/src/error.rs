use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: record is missing required field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("document `{id}` has unknown class `{class}`")]
    UnknownClass { id: String, class: String },

    #[error("seed `{seed}` of class `{class}` must normalize to exactly one token, got {tokens:?}")]
    SeedNotSingleToken {
        class: String,
        seed: String,
        tokens: Vec<String>,
    },

    #[error("seed `{seed}` appears in classes `{first}` and `{second}`")]
    DuplicateSeed {
        seed: String,
        first: String,
        second: String,
    },

    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),

    #[error("entries lack gold labels: {}", .0.join(", "))]
    MissingGold(Vec<String>),

    #[error("no confidence score for entry `{0}`")]
    MissingScore(String),

    #[error("no pseudo-labels produced")]
    NoPseudoLabels,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model has not been trained")]
    Untrained,

    #[error("non-finite parameter after update at step {step}")]
    NonFinite { step: usize },

    #[error("malformed model dump: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
