use std::fmt;

use thiserror::Error;

/// A position inside statement text, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {location}: {message}")]
    Syntax { location: Location, message: String },

    #[error("prompt error at {location}: {message}")]
    Prompt { location: Location, message: String },

    #[error("bind error: {0}")]
    Bind(String),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("execution error: {0}")]
    Execution(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Output(#[from] OutputError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn bind(msg: impl Into<String>) -> Self {
        Error::Bind(msg.into())
    }

    pub fn exec(msg: impl Into<String>) -> Self {
        Error::Execution(msg.into())
    }

    pub fn catalog(msg: impl Into<String>) -> Self {
        Error::Catalog(msg.into())
    }
}

/// Failures reported by predictor backends.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} backend error: {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendErrorKind {
    /// Worth another attempt (timeouts, rate limits, server errors, scripted faults).
    Retryable,
    /// The request itself is bad; retrying will not help.
    Permanent,
    /// The backend cannot be used at all (missing secret, bad URL).
    Config,
}

impl fmt::Display for BackendErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendErrorKind::Retryable => "retryable",
            BackendErrorKind::Permanent => "permanent",
            BackendErrorKind::Config => "configuration",
        })
    }
}

impl BackendError {
    pub fn retryable(msg: impl Into<String>) -> Self {
        Self { kind: BackendErrorKind::Retryable, message: msg.into() }
    }

    pub fn permanent(msg: impl Into<String>) -> Self {
        Self { kind: BackendErrorKind::Permanent, message: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self { kind: BackendErrorKind::Config, message: msg.into() }
    }
}

/// Structured-output extraction failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OutputError {
    #[error("malformed model output: {0}")]
    Malformed(String),
    #[error("row count mismatch: expected {expected}, got {actual}")]
    RowCountMismatch { expected: usize, actual: usize },
}
