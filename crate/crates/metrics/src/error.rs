use std::path::PathBuf;

use deepsee_core::CoreError;
use deepsee_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<candle_core::Error> for MetricsError {
    fn from(e: candle_core::Error) -> Self {
        Self::Nn(NnError::from(e))
    }
}

pub type Result<T> = std::result::Result<T, MetricsError>;
