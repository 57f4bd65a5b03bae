//! Fused CPU kernels with hand-written backward passes for the hot
//! elementwise and reshaping ops: nearest upsampling, per-channel
//! normalization and leaky ReLU.

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, Layout, Result, Shape, Tensor};

trait Float:
    Copy
    + Default
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
    + PartialOrd
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Float for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

fn slice<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("kernel input must be contiguous"),
    }
}

fn dims4(layout: &Layout) -> Result<[usize; 4]> {
    match layout.dims() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => bail!("expected rank 4, got {other:?}"),
    }
}

macro_rules! unary {
    ($s:expr, $l:expr, $f:ident $(, $arg:expr)*) => {
        match $s {
            CpuStorage::F32(v) => {
                let (o, sh) = $f::<f32>(slice(v, $l)?, $l $(, $arg)*)?;
                Ok((CpuStorage::F32(o), sh))
            }
            CpuStorage::F64(v) => {
                let (o, sh) = $f::<f64>(slice(v, $l)?, $l $(, $arg)*)?;
                Ok((CpuStorage::F64(o), sh))
            }
            _ => bail!("only f32/f64 are supported"),
        }
    };
}

macro_rules! binary {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, $f:ident $(, $arg:expr)*) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => {
                let (o, sh) = $f::<f32>(slice(a, $l1)?, $l1, slice(b, $l2)?, $l2 $(, $arg)*)?;
                Ok((CpuStorage::F32(o), sh))
            }
            (CpuStorage::F64(a), CpuStorage::F64(b)) => {
                let (o, sh) = $f::<f64>(slice(a, $l1)?, $l1, slice(b, $l2)?, $l2 $(, $arg)*)?;
                Ok((CpuStorage::F64(o), sh))
            }
            _ => bail!("only matching f32/f64 operands are supported"),
        }
    };
}

// Nearest upsampling.

struct Upsample(usize);
struct SumPool(usize);

fn upsample_impl<T: Float>(x: &[T], l: &Layout, f: usize) -> Result<(Vec<T>, Shape)> {
    let [b, c, h, w] = dims4(l)?;
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![T::default(); b * c * oh * ow];
    for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            let first = y * f * ow;
            {
                let row = &mut dst[first..first + ow];
                for (j, &v) in src.iter().enumerate() {
                    row[j * f..(j + 1) * f].fill(v);
                }
            }
            for r in 1..f {
                dst.copy_within(first..first + ow, first + r * ow);
            }
        }
    }
    Ok((out, Shape::from((b, c, oh, ow))))
}

fn sum_pool_impl<T: Float>(x: &[T], l: &Layout, f: usize) -> Result<(Vec<T>, Shape)> {
    let [b, c, h, w] = dims4(l)?;
    if h % f != 0 || w % f != 0 {
        bail!("sum pool: {h}x{w} not divisible by {f}");
    }
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![T::default(); b * c * oh * ow];
    for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let d = &mut dst[(y / f) * ow..(y / f + 1) * ow];
            for (j, acc) in d.iter_mut().enumerate() {
                for &v in &row[j * f..(j + 1) * f] {
                    *acc += v;
                }
            }
        }
    }
    Ok((out, Shape::from((b, c, oh, ow))))
}

impl CustomOp1 for Upsample {
    fn name(&self) -> &'static str {
        "upsample-nearest"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        unary!(s, l, upsample_impl, self.0)
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&SumPool(self.0))?))
    }
}

impl CustomOp1 for SumPool {
    fn name(&self) -> &'static str {
        "sum-pool"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        unary!(s, l, sum_pool_impl, self.0)
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Upsample(self.0))?))
    }
}

/// Nearest-neighbor upsampling of (B, C, H, W) by `factor`.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    x.contiguous()?.apply_op1(Upsample(factor))
}

/// Sum over non-overlapping `factor`×`factor` windows.
pub fn sum_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    x.contiguous()?.apply_op1(SumPool(factor))
}

// Per-channel normalization over (B, H, W).

struct Normalize(f64);
struct NormalizeBackward(f64);

/// Per-channel (mean, 1/σ).
fn channel_stats<T: Float>(x: &[T], b: usize, c: usize, hw: usize, eps: f64) -> Vec<(T, T)> {
    let n = (b * hw) as f64;
    (0..c)
        .map(|ci| {
            let planes = || (0..b).map(move |bi| &x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]);
            let mut sum = 0f64;
            for p in planes() {
                sum += p.iter().map(|&v| v.to_f64()).sum::<f64>();
            }
            let mean = sum / n;
            let mut ss = 0f64;
            for p in planes() {
                ss += p.iter().map(|&v| (v.to_f64() - mean).powi(2)).sum::<f64>();
            }
            (T::from_f64(mean), T::from_f64(1.0 / (ss / n + eps).sqrt()))
        })
        .collect()
}

fn normalize_impl<T: Float>(x: &[T], l: &Layout, eps: f64) -> Result<(Vec<T>, Shape)> {
    let [b, c, h, w] = dims4(l)?;
    let hw = h * w;
    let stats = channel_stats(x, b, c, hw, eps);
    let mut out = vec![T::default(); x.len()];
    for (i, (src, dst)) in x.chunks_exact(hw).zip(out.chunks_exact_mut(hw)).enumerate() {
        let (m, inv) = stats[i % c];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - m) * inv;
        }
    }
    Ok((out, Shape::from((b, c, h, w))))
}

/// `dx = (dy − mean(dy) − y·mean(dy·y)) / σ`, means per channel.
fn normalize_bwd_impl<T: Float>(x: &[T], l: &Layout, dy: &[T], _ldy: &Layout, eps: f64) -> Result<(Vec<T>, Shape)> {
    let [b, c, h, w] = dims4(l)?;
    let hw = h * w;
    let n = (b * hw) as f64;
    let stats = channel_stats(x, b, c, hw, eps);
    let mut dx = vec![T::default(); x.len()];
    for ci in 0..c {
        let (m, inv) = stats[ci];
        let (mut s_dy, mut s_dyy) = (0f64, 0f64);
        for bi in 0..b {
            let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
            for (&xv, &g) in x[r.clone()].iter().zip(&dy[r]) {
                let y = ((xv - m) * inv).to_f64();
                s_dy += g.to_f64();
                s_dyy += g.to_f64() * y;
            }
        }
        let (a, bb) = (T::from_f64(s_dy / n), T::from_f64(s_dyy / n));
        for bi in 0..b {
            let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
            for ((d, &xv), &g) in dx[r.clone()].iter_mut().zip(&x[r.clone()]).zip(&dy[r]) {
                let y = (xv - m) * inv;
                *d = (g - a - y * bb) * inv;
            }
        }
    }
    Ok((dx, Shape::from((b, c, h, w))))
}

impl CustomOp1 for Normalize {
    fn name(&self) -> &'static str {
        "channel-normalize"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        unary!(s, l, normalize_impl, self.0)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(arg.apply_op2_no_bwd(&grad.contiguous()?, &NormalizeBackward(self.0))?))
    }
}

impl CustomOp2 for NormalizeBackward {
    fn name(&self) -> &'static str {
        "channel-normalize-bwd"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        binary!(s1, l1, s2, l2, normalize_bwd_impl, self.0)
    }
}

/// `(x − μ_c) / sqrt(σ²_c + eps)` with statistics over batch and space.
pub fn channel_normalize(x: &Tensor, eps: f64) -> Result<Tensor> {
    x.contiguous()?.apply_op1(Normalize(eps))
}

// Leaky ReLU.

struct LeakyRelu(f64);
struct LeakyReluBackward(f64);

fn lrelu_impl<T: Float>(x: &[T], l: &Layout, slope: f64) -> Result<(Vec<T>, Shape)> {
    let s = T::from_f64(slope);
    let z = T::zero();
    Ok((x.iter().map(|&v| if v > z { v } else { v * s }).collect(), l.shape().clone()))
}

fn lrelu_bwd_impl<T: Float>(x: &[T], l: &Layout, dy: &[T], _: &Layout, slope: f64) -> Result<(Vec<T>, Shape)> {
    let s = T::from_f64(slope);
    let z = T::zero();
    Ok((
        x.iter().zip(dy).map(|(&v, &g)| if v > z { g } else { g * s }).collect(),
        l.shape().clone(),
    ))
}

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        unary!(s, l, lrelu_impl, self.0)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(arg.apply_op2_no_bwd(&grad.contiguous()?, &LeakyReluBackward(self.0))?))
    }
}

impl CustomOp2 for LeakyReluBackward {
    fn name(&self) -> &'static str {
        "leaky-relu-bwd"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        binary!(s1, l1, s2, l2, lrelu_bwd_impl, self.0)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.contiguous()?.apply_op1(LeakyRelu(slope))
}
