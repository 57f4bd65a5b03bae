//! Pixel-level fidelity: PSNR and SSIM on images in `[-1, 1]`, evaluated in
//! the `[0, 1]` range.

use deepsee_core::ImageTensor;
use ndarray::{Array2, Zip};

use crate::error::{MetricsError, Result};

/// Reported for identical images, where PSNR is unbounded.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return Err(MetricsError::Shape(format!(
            "{:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        )));
    }
    Ok(())
}

fn unit(v: f32) -> f64 {
    (v as f64 + 1.0) / 2.0
}

/// Peak signal-to-noise ratio in dB with peak 1.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len() as f64;
    let mse = Zip::from(a.data())
        .and(b.data())
        .fold(0.0, |acc, &x, &y| acc + (unit(x) - unit(y)).powi(2))
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_IDENTICAL_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL_DB)
    }
}

/// BT.601 luma in `[0, 1]`; single-channel images pass through.
pub fn luminance(img: &ImageTensor) -> Array2<f64> {
    let d = img.data();
    let (c, h, w) = d.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        if c == 3 {
            0.299 * unit(d[[0, y, x]]) + 0.587 * unit(d[[1, y, x]]) + 0.114 * unit(d[[2, y, x]])
        } else {
            unit(d[[0, y, x]])
        }
    })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid windows only.
fn filter_valid(x: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows = Array2::from_shape_fn((h, ow), |(y, j)| (0..k).map(|t| g[t] * x[[y, j + t]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..k).map(|t| g[t] * rows[[i + t, j]]).sum::<f64>())
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows of the luma.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(MetricsError::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    Ok(ssim_planes(&luminance(a), &luminance(b)))
}

pub fn ssim_planes(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let g = gaussian_window();
    let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
    let mx = filter_valid(x, &g);
    let my = filter_valid(y, &g);
    let sxx = filter_valid(&(x * x), &g);
    let syy = filter_valid(&(y * y), &g);
    let sxy = filter_valid(&(x * y), &g);
    let mut total = 0.0;
    Zip::from(&mx).and(&my).and(&sxx).and(&syy).and(&sxy).for_each(|&mx, &my, &sxx, &syy, &sxy| {
        let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    });
    total / mx.len() as f64
}
