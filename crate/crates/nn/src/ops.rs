//! Differentiable tensor helpers shared by the networks.

use candle_core::{DType, Tensor, D};

use crate::error::{shape_err, Result};
use crate::kernels;

pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(kernels::leaky_relu(x, LEAKY_SLOPE)?)
}

/// Nearest-neighbor upsampling of (B, C, H, W) by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    Ok(kernels::upsample_nearest(x, factor)?)
}

/// Non-overlapping `factor`×`factor` average pooling.
pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(shape_err(format!("avg_pool: {h}x{w} not divisible by {factor}")));
    }
    Ok((kernels::sum_pool(x, factor)? / (factor * factor) as f64)?)
}

/// Nearest-neighbor downsampling by an integer factor (index `i·factor`).
pub fn downsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(shape_err(format!("downsample: {h}x{w} not divisible by {factor}")));
    }
    Ok(x
        .reshape((b, c, h / factor, factor, w / factor, factor))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .contiguous()?
        .reshape((b, c, h / factor, w / factor))?)
}

/// Resizes a (B, N, H, W) mask to `(h, w)` by nearest neighbor, choosing
/// integer strides when possible.
pub fn resize_mask(mask: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, mh, mw) = mask.dims4()?;
    if (mh, mw) == (h, w) {
        return Ok(mask.clone());
    }
    if mh % h == 0 && mw % w == 0 && mh / h == mw / w {
        return downsample_nearest(mask, mh / h);
    }
    if h % mh == 0 && w % mw == 0 && h / mh == w / mw {
        return upsample_nearest(mask, h / mh);
    }
    let rows: Vec<u32> = (0..h).map(|i| (i * mh / h) as u32).collect();
    let cols: Vec<u32> = (0..w).map(|j| (j * mw / w) as u32).collect();
    let dev = mask.device();
    Ok(mask
        .index_select(&Tensor::new(rows, dev)?, 2)?
        .index_select(&Tensor::new(cols, dev)?, 3)?)
}

/// Parameter-free per-channel normalization over batch and spatial dims.
pub fn batch_normalize(x: &Tensor) -> Result<Tensor> {
    Ok(kernels::channel_normalize(x, NORM_EPS)?)
}

/// Masked mean of features per region.
///
/// `features`: (B, C, H, W), `mask`: one-hot (B, N, H, W) → (B, N, C).
/// Regions with no pixels yield zero rows.
pub fn regional_avg_pool(features: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let (mb, n, mh, mw) = mask.dims4()?;
    if (mb, mh, mw) != (b, h, w) {
        return Err(shape_err(format!(
            "regional_avg_pool: features {:?} vs mask {:?}",
            features.dims(),
            mask.dims()
        )));
    }
    let m = mask.to_dtype(features.dtype())?.reshape((b, n, h * w))?;
    let f = features.reshape((b, c, h * w))?;
    let sums = m.matmul(&f.transpose(1, 2)?.contiguous()?)?;
    let counts = m.sum_keepdim(2)?.maximum(1.0)?;
    Ok(sums.broadcast_div(&counts)?)
}

/// Paints each pixel with its region's style row: (B, N, d) × (B, N, H, W) → (B, d, H, W).
pub fn broadcast_style(style: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (b, n, d) = style.dims3()?;
    let (mb, mn, h, w) = mask.dims4()?;
    if (mb, mn) != (b, n) {
        return Err(shape_err(format!(
            "broadcast_style: style {:?} vs mask {:?}",
            style.dims(),
            mask.dims()
        )));
    }
    let m = mask.to_dtype(style.dtype())?.reshape((b, n, h * w))?;
    Ok(style
        .transpose(1, 2)?
        .contiguous()?
        .matmul(&m)?
        .reshape((b, d, h, w))?)
}

/// Channel-wise log-softmax of (B, C, H, W) logits.
pub fn log_softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.mean(D::Minus1)?.to_scalar::<f64>()?)
}
