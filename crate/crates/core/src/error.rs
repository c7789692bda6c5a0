use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments outside its domain
    /// (shape mismatch, kernel longer than signal, negative power, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates its type invariants.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("unsupported WAV codec id {0}")]
    UnsupportedCodec(u16),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("not implemented: {0}")]
    Unimplemented(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
