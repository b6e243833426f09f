use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EnrollError>;

#[derive(Debug, Error)]
pub enum EnrollError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown code `{0}`")]
    UnknownCode(String),

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("need at least {needed} distinct patients to split, found {found}")]
    TooFewPatients { needed: usize, found: usize },

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EnrollError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EnrollError::Io {
            path: path.into(),
            source,
        }
    }
}
