use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("shape fit failed: {0}")]
    Fit(String),
    #[error("landmark/segmentation transform failed: {0}")]
    Transform(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
