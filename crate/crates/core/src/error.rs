use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("label {value} at pixel (row {row}, col {col}) is out of range for {n_regions} regions")]
    LabelOutOfRange {
        row: usize,
        col: usize,
        value: u32,
        n_regions: usize,
    },

    #[error("mask is not one-hot at pixel (row {row}, col {col}): {active} active channels")]
    NotOneHot {
        row: usize,
        col: usize,
        active: usize,
    },

    #[error("region index {index} is out of range for {n_regions} regions")]
    RegionOutOfRange { index: usize, n_regions: usize },

    #[error("unknown region name `{0}`")]
    UnknownRegion(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] ::image::ImageError),

    #[error("png error: {0}")]
    Png(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
