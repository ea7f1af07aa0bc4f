use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The message without its variant prefix, for re-wrapping with context.
    pub fn detail(&self) -> String {
        match self {
            Error::Dimension(m)
            | Error::Config(m)
            | Error::State(m)
            | Error::DegenerateBatch(m)
            | Error::Analysis(m)
            | Error::NonFinite(m) => m.clone(),
            other => other.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
