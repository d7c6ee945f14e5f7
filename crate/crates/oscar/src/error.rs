//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Tensor shape or dimension mismatch.
    Shape(String),
    /// Token not present in the vocabulary, or id out of range.
    Vocab(String),
    /// Sequence or region budget exceeded.
    Limit(String),
    /// Invalid configuration value.
    Config(String),
    /// A value that must be finite was NaN or infinite.
    NonFinite(String),
    /// Corpus or checkpoint file is malformed or has the wrong version.
    Format(String),
    /// Generation could not satisfy a constraint within its retry budget.
    Exhausted(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Vocab(m) => write!(f, "vocabulary error: {m}"),
            Error::Limit(m) => write!(f, "limit exceeded: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Exhausted(m) => write!(f, "retries exhausted: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
