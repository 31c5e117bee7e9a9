use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("resource guard: {0}")]
    ResourceGuard(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl TomoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TomoError::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        TomoError::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, TomoError>;
