use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters: grid level out of range, unstable explicit step,
    /// too few ensemble members, mixed clock modes and the like.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// Malformed or out-of-order data on the wire. Fatal for the session.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The buffer does not yet hold a complete frame.
    #[error("incomplete frame: need {needed} more bytes")]
    NeedMoreBytes { needed: usize },

    #[error("session closed by peer")]
    SessionClosed,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
