use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or names that do not line up.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API called out of order (double apply, push after done, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity reached a loss, TD value or gradient.
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    /// The replay buffer has no episode long enough to sample from.
    #[error("replay buffer not ready: {0}")]
    NotReady(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
