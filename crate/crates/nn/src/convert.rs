//! Conversions between core value types and batched tensors.

use candle_core::{DType, Device, Tensor};
use deepsee_core::{ImageTensor, SemanticMask, StyleMatrix};
use ndarray::{Array2, Array3};

use crate::error::{shape_err, Result};

fn stack(parts: Vec<Tensor>) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(shape_err("empty batch"));
    }
    Ok(Tensor::stack(&parts, 0)?)
}

/// (B, C, H, W) from equally sized images.
pub fn images_to_tensor(images: &[&ImageTensor], dtype: DType) -> Result<Tensor> {
    let parts = images
        .iter()
        .map(|img| {
            let d = img.data();
            let (c, h, w) = d.dim();
            let v: Vec<f32> = d.iter().copied().collect();
            Ok(Tensor::from_vec(v, (c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
        })
        .collect::<Result<Vec<_>>>()?;
    stack(parts)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let (b, c, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    (0..b)
        .map(|i| {
            let chunk = flat[i * c * h * w..(i + 1) * c * h * w].to_vec();
            let arr = Array3::from_shape_vec((c, h, w), chunk).map_err(|e| shape_err(e.to_string()))?;
            Ok(if c == 3 {
                ImageTensor::rgb(arr)?
            } else {
                ImageTensor::new(arr, deepsee_core::ColorSpace::Feature)?
            })
        })
        .collect()
}

/// One-hot (B, N, H, W) as floats.
pub fn masks_to_tensor(masks: &[&SemanticMask], dtype: DType) -> Result<Tensor> {
    let parts = masks
        .iter()
        .map(|m| {
            let d = m.data();
            let (n, h, w) = d.dim();
            let v: Vec<u8> = d.iter().copied().collect();
            Ok(Tensor::from_vec(v, (n, h, w), &Device::Cpu)?.to_dtype(dtype)?)
        })
        .collect::<Result<Vec<_>>>()?;
    stack(parts)
}

/// (B, N, d).
pub fn styles_to_tensor(styles: &[&StyleMatrix], dtype: DType) -> Result<Tensor> {
    let parts = styles
        .iter()
        .map(|s| {
            let d = s.data();
            let v: Vec<f32> = d.iter().copied().collect();
            Ok(Tensor::from_vec(v, d.dim(), &Device::Cpu)?.to_dtype(dtype)?)
        })
        .collect::<Result<Vec<_>>>()?;
    stack(parts)
}

pub fn tensor_to_styles(t: &Tensor) -> Result<Vec<StyleMatrix>> {
    let (b, n, d) = t.dims3()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    (0..b)
        .map(|i| {
            let chunk = flat[i * n * d..(i + 1) * n * d].to_vec();
            let arr = Array2::from_shape_vec((n, d), chunk).map_err(|e| shape_err(e.to_string()))?;
            Ok(StyleMatrix::clamped(arr)?)
        })
        .collect()
}

/// Argmax over channels of (B, N, H, W) logits → one-hot masks.
pub fn logits_to_masks(logits: &Tensor) -> Result<Vec<SemanticMask>> {
    let (b, n, h, w) = logits.dims4()?;
    let idx: Vec<u32> = logits.argmax(1)?.flatten_all()?.to_vec1()?;
    (0..b)
        .map(|i| {
            let labels = Array2::from_shape_fn((h, w), |(y, x)| idx[i * h * w + y * w + x] as u8);
            Ok(SemanticMask::from_labels(&labels, n)?)
        })
        .collect()
}
