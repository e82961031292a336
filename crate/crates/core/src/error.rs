use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("class {class} has {count} samples; at least 3 are needed to populate every split")]
    ClassTooSmall { class: i64, count: usize },
    #[error("sample {0:?} has no label")]
    MissingLabel(String),
    #[error("cannot decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checkpoint config does not match the requested config: {0}")]
    ConfigMismatch(String),
    #[error("feature of sample {0:?} is not finite")]
    NonFinite(String),
    #[error("k = {k} exceeds the number of points {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("no quality score for sample {0:?}")]
    MissingScore(String),
    #[error("loss component {0} is not finite")]
    NonFiniteLoss(&'static str),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Other(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Other(format!("csv: {e}"))
    }
}
