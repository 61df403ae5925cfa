use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at {what}")]
    NonFinite { what: String },

    #[error("rational denominator {value:.3e} within pole tolerance at input {input}")]
    PoleProximity { input: f64, value: f64 },

    #[error("rank-deficient least-squares system (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("no band found: {0}")]
    NoBandFound(String),

    #[error("invalid transfer bins inside band: {bins:?}")]
    InvalidBins { bins: Vec<usize> },

    #[error("all transfer-function bins fall below the input power floor")]
    AllBinsInvalid,

    #[error("input width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("model has no fitted standardizers")]
    Unfitted,

    #[error("training failed: every restart diverged ({log})")]
    TrainingFailed { log: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite { .. }
            | Error::PoleProximity { .. }
            | Error::RankDeficient { .. }
            | Error::TrainingFailed { .. }
            | Error::AllBinsInvalid => ErrorKind::Numerical,
            Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
