use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("manifest error for {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("training diverged: non-finite values in {tensor}")]
    Divergence { tensor: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn parse(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
