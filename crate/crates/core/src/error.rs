use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("turn {turn} out of range 0..={last}")]
    TurnRange { turn: usize, last: usize },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("template error in rule {rule}: unbound capture {{{capture}}}")]
    Template { rule: String, capture: String },

    #[error("rule file line {line}, column {column}: {message}")]
    Dsl {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("sidecar error for dialogue {dialogue_id}: {message}")]
    Sidecar { dialogue_id: u64, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("missing embedding for key {0}")]
    MissingKey(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data/format, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dsl { .. } | Error::Template { .. } => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
