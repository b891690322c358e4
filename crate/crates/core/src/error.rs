use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or argument lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed, too short, or otherwise unusable.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A window configuration is inconsistent. The message names the offending parameter.
    #[error("configuration error: {0}")]
    Config(String),

    /// Model estimation failed.
    #[error("fit error: {0}")]
    Fit(String),

    /// A numerical routine did not produce a usable result.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
