//! Learned perceptual distance between images and the diversity of
//! renders under different styles.

use candle_core::{DType, Tensor};
use deepsee_core::ImageTensor;
use deepsee_nn::convert::images_to_tensor;
use deepsee_nn::Lpips;

use crate::error::{MetricsError, Result};

pub fn lpips(a: &ImageTensor, b: &ImageTensor, net: &Lpips) -> Result<f64> {
    Ok(lpips_batch(&[a], &[b], net)?[0])
}

/// Per-pair distances for two equally long image lists.
pub fn lpips_batch(a: &[&ImageTensor], b: &[&ImageTensor], net: &Lpips) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricsError::Shape(format!("{} vs {} images", a.len(), b.len())));
    }
    let dtype = net.lin[0].dtype();
    let d = net.distance(&images_to_tensor(a, dtype)?, &images_to_tensor(b, dtype)?)?;
    Ok(d.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

/// Mean LPIPS over all unordered pairs of `renders`; 0 for fewer than two.
pub fn mean_pairwise_lpips(renders: &[ImageTensor], net: &Lpips) -> Result<f64> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for i in 0..renders.len() {
        for j in i + 1..renders.len() {
            left.push(&renders[i]);
            right.push(&renders[j]);
        }
    }
    if left.is_empty() {
        return Ok(0.0);
    }
    let d = lpips_batch(&left, &right, net)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Stacks images into a batch tensor for an embedder.
pub fn batch(images: &[&ImageTensor], dtype: DType) -> Result<Tensor> {
    Ok(images_to_tensor(images, dtype)?)
}
