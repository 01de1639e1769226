use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the tick-to-forecast pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error ({format} v{version}): {msg}")]
    Format {
        format: &'static str,
        version: u16,
        msg: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
