//! Core domain types for semantic explorative face super-resolution.
//!
//! Everything in this crate is a plain value type: images, one-hot semantic
//! layouts, per-region style matrices and the model configuration, plus the
//! pure functions that transform them (mask editing, style algebra, bicubic
//! resampling, dataset pairing). Network code lives in `deepsee-nn`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod mask;
pub mod regions;
pub mod resample;
pub mod style;
pub mod synthetic;

pub use config::{Ablation, ModelConfig, StyleSource, Variant};
pub use dataset::{DatasetRecord, GuideChoice, GuidePool, Manifest, Split, TrainingPair};
pub use error::{CoreError, Result};
pub use image::{ColorSpace, ImageTensor};
pub use mask::{LabelMap, MaskEdit, PaintShape, SemanticMask};
pub use regions::{Region, N_REGIONS, REGION_NAMES};
pub use style::StyleMatrix;
