//! 2-D convolution as im2col + GEMM with a custom backward pass.
//!
//! Supports stride, padding and dilation per axis (groups = 1), for f32 and
//! f64 on the CPU.

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Result, Shape, Tensor};
use gemm::Parallelism;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    pub fn same(k: usize) -> Self {
        Self {
            stride: (1, 1),
            padding: (k / 2, k / 2),
            dilation: (1, 1),
        }
    }

    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
            dilation: (dilation, dilation),
        }
    }

    pub fn out_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let eff_h = self.dilation.0 * (kh - 1) + 1;
        let eff_w = self.dilation.1 * (kw - 1) + 1;
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        if ph < eff_h || pw < eff_w || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some(((ph - eff_h) / self.stride.0 + 1, (pw - eff_w) / self.stride.1 + 1))
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn l(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == (1, 1)
            && self.spec.padding == (0, 0)
    }
}

trait Elem: Copy + Default + std::ops::AddAssign + 'static {}
impl Elem for f32 {}
impl Elem for f64 {}

fn parallelism() -> Parallelism {
    match candle_core::utils::get_num_threads() {
        0 | 1 => Parallelism::None,
        n => Parallelism::Rayon(n),
    }
}

fn im2col<T: Elem>(x: &[T], g: &Geom, col: &mut [T]) {
    let (sh, sw) = g.spec.stride;
    let (ph, pw) = g.spec.padding;
    let (dh, dw) = g.spec.dilation;
    let l = g.l();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * l;
                for oy in 0..g.oh {
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::default());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if sw == 1 {
                        // Valid outputs: 0 <= ox + off < w.
                        let off = (kj * dw) as isize - pw as isize;
                        let lo = (-off).clamp(0, g.ow as isize) as usize;
                        let hi = (g.w as isize - off).clamp(lo as isize, g.ow as isize) as usize;
                        dst[..lo].fill(T::default());
                        dst[hi..].fill(T::default());
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + kj * dw) as isize - pw as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::default()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Elem>(col: &[T], g: &Geom, x: &mut [T]) {
    let (sh, sw) = g.spec.stride;
    let (ph, pw) = g.spec.padding;
    let (dh, dw) = g.spec.dilation;
    let l = g.l();
    x.fill(T::default());
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * l;
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if sw == 1 {
                        let off = (kj * dw) as isize - pw as isize;
                        let lo = (-off).clamp(0, g.ow as isize) as usize;
                        let hi = (g.w as isize - off).clamp(lo as isize, g.ow as isize) as usize;
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            for (d, &v) in dst[s0..s0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * sw + kj * dw) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `dst[m×n] (+)= lhs · rhs` with explicit strides (column stride, row stride).
#[allow(clippy::too_many_arguments)]
fn matmul<T: Elem>(
    m: usize,
    n: usize,
    k: usize,
    dst: &mut [T],
    accumulate: bool,
    lhs: &[T],
    lhs_strides: (usize, usize),
    rhs: &[T],
    rhs_strides: (usize, usize),
    one: T,
) {
    debug_assert!(dst.len() >= m * n);
    // SAFETY: all slices are bounds-checked by construction for the given
    // shapes and strides; gemm reads lhs/rhs and writes dst only.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            lhs.as_ptr(),
            lhs_strides.0 as isize,
            lhs_strides.1 as isize,
            rhs.as_ptr(),
            rhs_strides.0 as isize,
            rhs_strides.1 as isize,
            one,
            one,
            false,
            false,
            false,
            parallelism(),
        )
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout, what: &str) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("conv2d: {what} must be contiguous"),
    }
}

fn dims4(layout: &Layout, what: &str) -> Result<[usize; 4]> {
    match layout.dims() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => bail!("conv2d: {what} must be rank 4, got {other:?}"),
    }
}

macro_rules! dispatch {
    ($s1:expr, $s2:expr, $f:ident, $($arg:expr),*) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => {
                let (v, shape) = $f::<f32>(a, b, $($arg),*)?;
                Ok((CpuStorage::F32(v), shape))
            }
            (CpuStorage::F64(a), CpuStorage::F64(b)) => {
                let (v, shape) = $f::<f64>(a, b, $($arg),*)?;
                Ok((CpuStorage::F64(v), shape))
            }
            _ => bail!("conv2d: only matching f32/f64 operands are supported"),
        }
    };
}

trait One {
    fn one() -> Self;
}
impl One for f32 {
    fn one() -> Self {
        1.0
    }
}
impl One for f64 {
    fn one() -> Self {
        1.0
    }
}

struct Forward {
    spec: ConvSpec,
}

fn forward_impl<T: Elem + One>(
    x: &[T],
    w: &[T],
    lx: &Layout,
    lw: &Layout,
    spec: ConvSpec,
) -> Result<(Vec<T>, Shape)> {
    let [b, c, h, wd] = dims4(lx, "input")?;
    let [co, ci, kh, kw] = dims4(lw, "weight")?;
    if ci != c {
        bail!("conv2d: input has {c} channels, weight expects {ci}");
    }
    let Some((oh, ow)) = spec.out_size(h, wd, kh, kw) else {
        bail!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd}");
    };
    let x = contiguous(x, lx, "input")?;
    let w = contiguous(w, lw, "weight")?;
    let g = Geom { c, h, w: wd, kh, kw, oh, ow, spec };
    let (k, l) = (g.k(), g.l());
    let mut out = vec![T::default(); b * co * l];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::default(); k * l] };
    for bi in 0..b {
        let xb = &x[bi * c * h * wd..(bi + 1) * c * h * wd];
        let rhs: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut col);
            &col
        };
        let dst = &mut out[bi * co * l..(bi + 1) * co * l];
        matmul(co, l, k, dst, false, w, (1, k), rhs, (1, l), T::one());
    }
    Ok((out, Shape::from((b, co, oh, ow))))
}

impl CustomOp2 for Forward {
    fn name(&self) -> &'static str {
        "conv2d-gemm"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, s2, forward_impl, l1, l2, self.spec)
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let (_, _, h, wd) = x.dims4()?;
        let gx = grad.apply_op2_no_bwd(w, &BackwardInput { spec: self.spec, h, w: wd })?;
        let (_, _, kh, kw) = w.dims4()?;
        let gw = x.apply_op2_no_bwd(&grad, &BackwardWeight { spec: self.spec, kh, kw })?;
        Ok((Some(gx), Some(gw)))
    }
}

struct BackwardInput {
    spec: ConvSpec,
    h: usize,
    w: usize,
}

fn backward_input_impl<T: Elem + One>(
    dy: &[T],
    w: &[T],
    ldy: &Layout,
    lw: &Layout,
    spec: ConvSpec,
    h: usize,
    wd: usize,
) -> Result<(Vec<T>, Shape)> {
    let [b, co, oh, ow] = dims4(ldy, "output grad")?;
    let [_, c, kh, kw] = dims4(lw, "weight")?;
    let dy = contiguous(dy, ldy, "output grad")?;
    let w = contiguous(w, lw, "weight")?;
    let g = Geom { c, h, w: wd, kh, kw, oh, ow, spec };
    let (k, l) = (g.k(), g.l());
    let mut dx = vec![T::default(); b * c * h * wd];
    let mut dcol = vec![T::default(); k * l];
    for bi in 0..b {
        let dyb = &dy[bi * co * l..(bi + 1) * co * l];
        let dxb = &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd];
        if g.is_pointwise() {
            matmul(k, l, co, dxb, false, w, (k, 1), dyb, (1, l), T::one());
        } else {
            matmul(k, l, co, &mut dcol, false, w, (k, 1), dyb, (1, l), T::one());
            col2im(&dcol, &g, dxb);
        }
    }
    Ok((dx, Shape::from((b, c, h, wd))))
}

impl CustomOp2 for BackwardInput {
    fn name(&self) -> &'static str {
        "conv2d-gemm-bwd-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, s2, backward_input_impl, l1, l2, self.spec, self.h, self.w)
    }
}

struct BackwardWeight {
    spec: ConvSpec,
    kh: usize,
    kw: usize,
}

fn backward_weight_impl<T: Elem + One>(
    x: &[T],
    dy: &[T],
    lx: &Layout,
    ldy: &Layout,
    spec: ConvSpec,
    kh: usize,
    kw: usize,
) -> Result<(Vec<T>, Shape)> {
    let [b, c, h, wd] = dims4(lx, "input")?;
    let [_, co, oh, ow] = dims4(ldy, "output grad")?;
    let x = contiguous(x, lx, "input")?;
    let dy = contiguous(dy, ldy, "output grad")?;
    let g = Geom { c, h, w: wd, kh, kw, oh, ow, spec };
    let (k, l) = (g.k(), g.l());
    let mut dw = vec![T::default(); co * k];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::default(); k * l] };
    for bi in 0..b {
        let xb = &x[bi * c * h * wd..(bi + 1) * c * h * wd];
        let colb: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut col);
            &col
        };
        let dyb = &dy[bi * co * l..(bi + 1) * co * l];
        matmul(co, k, l, &mut dw, bi > 0, dyb, (1, l), colb, (l, 1), T::one());
    }
    Ok((dw, Shape::from((co, c, kh, kw))))
}

impl CustomOp2 for BackwardWeight {
    fn name(&self) -> &'static str {
        "conv2d-gemm-bwd-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, s2, backward_weight_impl, l1, l2, self.spec, self.kh, self.kw)
    }
}

struct ForwardBias {
    spec: ConvSpec,
}

fn add_bias<T: Elem>(out: &mut [T], bias: &[T], lb: &Layout, plane: usize) -> Result<()> {
    let bias = contiguous(bias, lb, "bias")?;
    for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let b = bias[i % bias.len()];
        for v in chunk {
            *v += b;
        }
    }
    Ok(())
}

impl CustomOp3 for ForwardBias {
    fn name(&self) -> &'static str {
        "conv2d-gemm-bias"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let conv: Result<(CpuStorage, Shape)> = dispatch!(s1, s2, forward_impl, l1, l2, self.spec);
        let (mut out, shape) = conv?;
        let dims = shape.dims();
        if l3.dims() != [dims[1]] {
            bail!("conv2d: bias must have {} entries, got {:?}", dims[1], l3.dims());
        }
        let plane = dims[2] * dims[3];
        match (&mut out, s3) {
            (CpuStorage::F32(o), CpuStorage::F32(b)) => add_bias(o, b, l3, plane)?,
            (CpuStorage::F64(o), CpuStorage::F64(b)) => add_bias(o, b, l3, plane)?,
            _ => bail!("conv2d: bias dtype must match input"),
        }
        Ok((out, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _b: &Tensor,
        res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (gx, gw) = Forward { spec: self.spec }.bwd(x, w, res, grad)?;
        let gb = grad.contiguous()?.apply_op1_no_bwd(&ChannelSum)?;
        Ok((gx, gw, Some(gb)))
    }
}

/// Sum of (B, C, H, W) over everything but C.
struct ChannelSum;

fn channel_sum<T: Elem>(x: &[T], l: &Layout) -> Result<(Vec<T>, Shape)> {
    let [_, c, h, w] = dims4(l, "output grad")?;
    let x = contiguous(x, l, "output grad")?;
    let mut out = vec![T::default(); c];
    for (i, chunk) in x.chunks_exact(h * w).enumerate() {
        let mut acc = T::default();
        for &v in chunk {
            acc += v;
        }
        out[i % c] += acc;
    }
    Ok((out, Shape::from(c)))
}

impl CustomOp1 for ChannelSum {
    fn name(&self) -> &'static str {
        "conv2d-bias-grad"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        match s {
            CpuStorage::F32(v) => {
                let (o, sh) = channel_sum(v, l)?;
                Ok((CpuStorage::F32(o), sh))
            }
            CpuStorage::F64(v) => {
                let (o, sh) = channel_sum(v, l)?;
                Ok((CpuStorage::F64(o), sh))
            }
            _ => bail!("conv2d: only f32/f64 are supported"),
        }
    }
}

/// `x`: (B, C_in, H, W), `weight`: (C_out, C_in, kh, kw), `bias`: (C_out).
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let (x, w) = (x.contiguous()?, weight.contiguous()?);
    match bias {
        Some(b) => x.apply_op3(&w, &b.contiguous()?, ForwardBias { spec }),
        None => x.apply_op2(&w, Forward { spec }),
    }
}
