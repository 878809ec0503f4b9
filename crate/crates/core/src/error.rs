use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFinite { layer: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("weight vector length mismatch: expected {expected}, got {actual}")]
    Codec { expected: usize, actual: usize },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("pre-pass failed for collaborator {collaborator}: {reason}")]
    Prepass { collaborator: u32, reason: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
