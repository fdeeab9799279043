use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wsc_core::error::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{key} refers to {path}, which does not exist")]
    MissingPath { key: &'static str, path: PathBuf },

    #[error("checkpoint does not match the config: {0}")]
    Mismatch(String),

    #[error("unknown schema id {0:?}")]
    UnknownSchema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
