use thiserror::Error;

/// Recoverable errors surfaced by the library.
///
/// Contract violations (shape mismatches on the tape, empty inputs to
/// graph builders, out-of-range labels) are programmer errors and panic
/// instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("document {id:?} has no usable sentences")]
    EmptyDocument { id: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
