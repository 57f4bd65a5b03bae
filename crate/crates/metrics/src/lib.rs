//! Image-quality metrics and corpus evaluation.

pub mod error;
pub mod eval;
pub mod fid;
pub mod fidelity;
pub mod perceptual;

pub use error::{MetricsError, Result};
pub use eval::{evaluate_run, EvalOptions, MaskSource, Report};
pub use fid::{fid, frechet_distance, Gaussian};
pub use fidelity::{psnr, ssim, PSNR_IDENTICAL_DB};
pub use perceptual::{lpips, mean_pairwise_lpips};
