use std::fmt;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or configuration values that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the domain of an operation (e.g. an item index past the catalog).
    #[error("domain error: {0}")]
    Domain(String),
    /// An operation called in a state where it is not allowed.
    #[error("usage error: {0}")]
    Usage(String),
    /// A loss or gradient became NaN/Inf.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// A named configuration field failed validation.
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },
    /// Sampling was requested from a buffer that does not hold enough transitions yet.
    #[error("replay buffer not ready: {have} stored, {need} required")]
    NotReady { have: usize, need: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub(crate) fn validation(field: &str, reason: impl fmt::Display) -> Self {
        Error::Validation {
            field: field.to_owned(),
            reason: reason.to_string(),
        }
    }
}
