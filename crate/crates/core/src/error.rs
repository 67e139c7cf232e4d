use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the relation-discovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {index}: field `{field}`: {reason}")]
    MalformedRecord {
        index: usize,
        field: String,
        reason: String,
    },

    #[error("instance {id}: {reason}")]
    InvalidInstance { id: String, reason: String },

    #[error("relation {relation}: {reason}")]
    InsufficientInstances { relation: String, reason: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("lexicon {path}, line {line}: {reason}")]
    Lexicon {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("prompt for {id} does not fit max length {max_len} (suffix needs {needed})")]
    PromptTooLong {
        id: String,
        max_len: usize,
        needed: usize,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
