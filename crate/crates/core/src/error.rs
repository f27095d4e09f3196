use std::io;

use crate::protocol::wire::ErrorCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("length {len} is not a multiple of {block}")]
    NotDivisible { len: usize, block: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("peer reported error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },

    #[error("protocol violation ({code:?}): {message}")]
    Protocol { code: ErrorCode, message: String },

    #[error("duplicate enrollment for device {0}")]
    DuplicateEnrollment(String),

    #[error("unknown device {0}")]
    UnknownDevice(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
