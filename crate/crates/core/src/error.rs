use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward called without a matching forward pass")]
    NoForwardCache,
    #[error("cannot update the parameters of a frozen network")]
    Frozen,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
