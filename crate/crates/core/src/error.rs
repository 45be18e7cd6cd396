use thiserror::Error;

use crate::bitstream::Encoding;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the {encoding} range")]
    Range { value: f64, encoding: Encoding },

    #[error("encoding mismatch: {left} vs {right}")]
    EncodingMismatch { left: Encoding, right: Encoding },

    #[error("stream length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("Q-value divergence: {0}")]
    Divergence(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn env(msg: impl Into<String>) -> Self {
        Error::Env(msg.into())
    }
}
