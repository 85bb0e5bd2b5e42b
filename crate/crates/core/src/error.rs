use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A static configuration invariant does not hold.
    #[error("invalid configuration: {invariant}: {detail}")]
    Config { invariant: &'static str, detail: String },

    /// A structured text document could not be parsed.
    #[error("parse error at line {line}, key `{key}`: {message}")]
    Parse { line: usize, key: String, message: String },

    /// A demand file or route could not be loaded against the network.
    #[error("load error at line {line}: {message}")]
    Load { line: usize, message: String },

    /// Vector or matrix dimensions disagree.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// Demand is at or above capacity for a signal timing computation.
    #[error("oversaturated: {0}")]
    Oversaturated(String),

    /// Training produced a non-finite quantity.
    #[error("training diverged: {0}")]
    Training(String),

    /// The agent state encoder is missing auxiliary data it needs.
    #[error("state encoding: {0}")]
    Encoding(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn config(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            invariant,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
