use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or hyperparameters that cannot be built or run.
    #[error("configuration error: {0}")]
    Config(String),
    /// An API used out of order or with an invalid argument.
    #[error("usage error: {0}")]
    Usage(String),
    /// A NaN or infinity appeared in an activation or gradient.
    #[error("non-finite value in {scope}: {detail}")]
    NonFinite { scope: String, detail: String },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
