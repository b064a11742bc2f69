use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] mcconv_core::Error),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("label {label} at row {row} is outside 0..{classes}")]
    InvalidLabel { row: usize, label: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset not found at {0}")]
    DatasetNotFound(PathBuf),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainError {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        TrainError::InvalidSpec(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        TrainError::ShapeMismatch(msg.into())
    }
}
