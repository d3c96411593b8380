use std::path::PathBuf;

use thermofuse_core::dataset::{SampleError, SplitError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("pretrained weights not found at {0}")]
    WeightsUnavailable(PathBuf),
    #[error("first layer has {found} input channels, expected {expected}")]
    WrongChannelCount { expected: usize, found: usize },
    #[error("input of shape {found:?} does not fit a model expecting {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer `{0}` has no spatial feature map")]
    NonSpatialLayer(String),
    #[error("test sample `{0}` reached the training loader")]
    LeakageDetected(String),
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("fold {0} is not in 1..=5")]
    BadFold(usize),
    #[error("no samples available for {0}")]
    EmptySet(&'static str),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("sample `{id}`: {source}")]
    Sample { id: String, source: SampleError },
    #[error("modality mismatch: model takes {model}, data is {data}")]
    ModalityMismatch {
        model: thermofuse_core::Modality,
        data: thermofuse_core::Modality,
    },
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
