use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong between loading an image and scoring a mask.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {reason}")]
    Io { path: PathBuf, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("period estimation failed: {0} (pass an explicit filter size to skip estimation)")]
    PeriodEstimation(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("model error: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
