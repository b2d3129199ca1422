use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error in pair `{pair_id}`: {message}")]
    Validation { pair_id: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("XML parse error at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("tensor `{tensor}`: {message}")]
    Tensor { tensor: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("template error: missing slot {{{0}}}")]
    Template(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("empty completion from external model")]
    EmptyOutput,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn validation(pair_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { pair_id: pair_id.into(), message: message.into() }
    }
}
