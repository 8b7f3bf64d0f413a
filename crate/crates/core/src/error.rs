use std::path::PathBuf;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration} (batch samples {batch:?})")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        batch: Vec<String>,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Self::Corrupt { path: path.into(), detail: detail.into() }
    }
}
