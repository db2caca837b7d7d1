use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a chat or embedding backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("prompt of {prompt_tokens} tokens exceeds context capacity of {max_tokens}")]
    ContextOverflow { prompt_tokens: usize, max_tokens: usize },
    #[error("provider returned dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no scripted response for template `{template}`")]
    NoScriptedResponse { template: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited(_))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("integrity check failed for layer `{layer}`: {message}")]
    Integrity { layer: String, message: String },
    #[error("missing layer file for `{0}`")]
    MissingLayer(String),
    #[error("schema has {} violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidSchema(Vec<Violation>),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("template `{template}`: {message}")]
    Template { template: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Sparql(#[from] crate::sparql::SparqlError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("query failed after stage `{last_stage}`: {source}")]
    QueryFailed {
        last_stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure class, stable across releases; the CLI maps it to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Backend,
    Integrity,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Config => "config",
            ErrorClass::Backend => "backend",
            ErrorClass::Integrity => "integrity",
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Template { .. } => ErrorClass::Config,
            Error::Backend(_) => ErrorClass::Backend,
            Error::QueryFailed { source, .. } => source.class(),
            Error::InvalidInput(_) => ErrorClass::Usage,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::Integrity { .. }
            | Error::MissingLayer(_)
            | Error::InvalidSchema(_)
            | Error::Invariant(_)
            | Error::Numeric(_)
            | Error::Sparql(_)
            | Error::Json(_) => ErrorClass::Integrity,
        }
    }
}
