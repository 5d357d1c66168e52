use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("frame of length {len} is shorter than one window ({window})")]
    FrameTooShort { len: usize, window: usize },

    #[error("anomaly event [{start}, {end}) extends past the end of the frame ({len})")]
    EventOutOfRange { start: usize, end: usize, len: usize },

    #[error("anomaly events overlap at index {0}")]
    OverlappingEvents(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{0} requires at least one positive and one negative label")]
    SingleClass(&'static str),

    #[error("requested {requested} but only {available} available: {what}")]
    NotEnoughSamples {
        what: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("non-finite gradient at epoch {epoch}, step {step}")]
    NonFiniteGradient { epoch: usize, step: usize },

    #[error("model is not fitted: {0}")]
    NotFitted(&'static str),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

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

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
