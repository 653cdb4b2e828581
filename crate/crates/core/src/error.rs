use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions or invalid settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Full enumeration would need more permutation classes than allowed.
    #[error(
        "resource error: {required} permutation classes required, cap is {cap}; \
         use stochastic mode or raise the cap"
    )]
    Resource { required: u128, cap: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
