use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A closed form was evaluated outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// An explicit scheme would be unstable at the requested step size.
    #[error("stability guard tripped: {0}")]
    Stability(String),
    /// NaN, blow-up or a root finder that could not bracket.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
