use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("empty length axis passed to {0}")]
    EmptyLength(&'static str),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible weight bundle: {0}")]
    IncompatibleBundle(String),

    #[error("at least two connected users are required, got {0}")]
    InsufficientUsers(usize),

    #[error("malformed weight message at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error("dataset {name}: {reason}")]
    Dataset { name: String, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("user {user} failed at epoch {epoch}: {source}")]
    Round {
        user: u32,
        epoch: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
