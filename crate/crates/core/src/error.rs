use thiserror::Error;

use crate::npy::NpyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid patch geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid probabilities: {0}")]
    InvalidProbability(String),

    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    #[error("patch at pixel {0} has an empty foreground")]
    EmptyForeground(usize),

    #[error("ground truth contains no instances")]
    EmptyGroundTruth,

    #[error("ground truth instance {0} is empty")]
    EmptyInstance(usize),

    #[error("could not place shape after {0} attempts")]
    PlacementFailure(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Npy(#[from] NpyError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than the
    /// environment (I/O); the CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Npy(NpyError::Io { .. }))
    }
}
