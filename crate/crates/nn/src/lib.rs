//! Networks, losses and feature extractors for semantic explorative face
//! super-resolution, built on `candle` tensors with a GEMM-backed convolution.

pub mod assets;
pub mod checkpoint;
pub mod conv;
pub mod convert;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod extractor;
pub mod generator;
pub mod kernels;
pub mod layers;
pub mod losses;
pub mod model;
pub mod norm;
pub mod ops;
pub mod params;
pub mod segmentation;

pub use checkpoint::{Checkpoint, CheckpointKind};
pub use encoder::EncoderPath;
pub use error::{NnError, Result};
pub use extractor::{Embedder, FeatureExtractor, Lpips, Vgg, VggKind, VggEmbedder};
pub use model::{DeepSee, Segmenter};
pub use params::ParamStore;
