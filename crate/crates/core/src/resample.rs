//! Separable bicubic resampling.
//!
//! Kernel: Keys cubic with `a = -0.5`. When minifying, the kernel is
//! stretched by the scale factor so it acts as a low-pass filter; when
//! magnifying it keeps its natural 4-tap support. Sample positions use
//! half-pixel centers. Taps that fall outside the image are dropped and the
//! remaining weights renormalized to sum to one. All arithmetic is `f64`.

use ndarray::{Array2, Array3};

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;

pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel, support `[-2, 2]`.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Resampling taps for one output coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Per-output-index taps mapping `in_size` samples onto `out_size`.
pub fn taps(in_size: usize, out_size: usize) -> Vec<Taps> {
    let scale = in_size as f64 / out_size as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..out_size)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).trunc().max(0.0)) as usize;
            let hi = ((center + support + 0.5).trunc() as usize).min(in_size);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|j| cubic((j as f64 - center + 0.5) / filter_scale))
                .collect();
            let total: f64 = weights.iter().sum();
            if total != 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Resamples one plane to `out_h × out_w` without clamping.
pub fn resample_plane(plane: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let mut horiz = Array2::<f64>::zeros((h, out_w));
    for y in 0..h {
        for (x, t) in tx.iter().enumerate() {
            let mut acc = 0.0;
            for (k, wgt) in t.weights.iter().enumerate() {
                acc += wgt * plane[[y, t.start + k]];
            }
            horiz[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for (y, t) in ty.iter().enumerate() {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (k, wgt) in t.weights.iter().enumerate() {
                acc += wgt * horiz[[t.start + k, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Bicubic resize of every channel, clamped to `[-1, 1]`.
pub fn bicubic_resample(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "output size must be positive, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let c = img.channels();
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = img.plane(ch).mapv(|v| v as f64);
        let r = resample_plane(&plane, out_h, out_w);
        out.index_axis_mut(ndarray::Axis(0), ch)
            .assign(&r.mapv(|v| v.clamp(-1.0, 1.0) as f32));
    }
    ImageTensor::new(out, img.colorspace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn taps_are_normalized() {
        for (i, o) in [(8, 4), (16, 3), (5, 20), (7, 7), (256, 32)] {
            for t in taps(i, o) {
                let s: f64 = t.weights.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(t.start + t.weights.len() <= i);
            }
        }
    }

    #[test]
    fn constant_images_stay_constant() {
        for (h, w) in [(12, 12), (4, 9), (33, 17)] {
            let img = ImageTensor::filled(16, 16, 0.37);
            let out = bicubic_resample(&img, h, w).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let mut r = rand::rngs::StdRng::seed_from_u64(0);
        let d = Array3::from_shape_simple_fn((3, 9, 7), || r.random_range(-1.0f32..1.0));
        let img = ImageTensor::rgb(d).unwrap();
        assert_eq!(bicubic_resample(&img, 9, 7).unwrap(), img);
        // The kernel alone already reproduces the input at scale 1.
        let p = img.plane(0).mapv(|v| v as f64);
        let q = resample_plane(&p, 9, 7);
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_output() {
        let img = ImageTensor::filled(4, 4, 0.0);
        assert!(bicubic_resample(&img, 0, 2).is_err());
    }

    #[test]
    fn output_is_clamped() {
        // A hard edge overshoots under a negative-lobe kernel when magnified.
        let d = Array3::from_shape_fn((3, 4, 4), |(_, _, x)| if x < 2 { -1.0 } else { 1.0 });
        let img = ImageTensor::rgb(d).unwrap();
        let raw = resample_plane(&img.plane(0).mapv(|v| v as f64), 16, 16);
        assert!(raw.iter().any(|&v| v > 1.0));
        let out = bicubic_resample(&img, 16, 16).unwrap();
        assert!(out.is_normalized());
    }
}
