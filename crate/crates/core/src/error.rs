use std::io;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value (first at flat index {index})")]
    NonFinite { op: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("token file: {0}")]
    TokenFile(String),

    #[error("freeze contract violated: {0}")]
    Freeze(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
