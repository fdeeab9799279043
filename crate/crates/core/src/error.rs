use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("fully masked row {row}")]
    FullyMaskedRow { row: usize },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed line-oriented input (vocab, CoNLL-U, JSON lines).
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid dependency tree in sentence {sentence}: {message}")]
    Tree { sentence: usize, message: String },

    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    #[error("schema {id}: {message}")]
    Schema { id: String, message: String },

    #[error("alignment error for schema {id}: {message}")]
    Alignment { id: String, message: String },

    #[error("missing parse for schema {id} candidate {candidate}")]
    MissingParse { id: String, candidate: usize },

    #[error("no prediction for schema {0}")]
    Coverage(String),

    #[error("switch group {group}: {message}")]
    Pairing { group: String, message: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
