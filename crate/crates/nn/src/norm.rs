//! Mask- and style-conditioned normalization layers.

use candle_core::Tensor;

use crate::error::{NnError, Result};
use crate::layers::Conv2d;
use crate::ops::batch_normalize;
use crate::params::{Init, InitKind};

/// Small conv net mapping a one-hot mask to per-pixel scale and shift.
#[derive(Debug, Clone)]
pub struct MaskBranch {
    pub shared: Conv2d,
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl MaskBranch {
    pub fn new(init: &mut Init, n_regions: usize, hidden: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            shared: Conv2d::same(&mut init.sub("shared"), n_regions, hidden, 3)?,
            gamma: Conv2d::same(&mut init.sub("gamma"), hidden, channels, 3)?,
            beta: Conv2d::same(&mut init.sub("beta"), hidden, channels, 3)?,
        })
    }

    pub fn forward(&self, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let a = self.shared.forward(mask)?.relu()?;
        Ok((self.gamma.forward(&a)?, self.beta.forward(&a)?))
    }
}

/// Convolutions on the broadcast per-pixel style map.
#[derive(Debug, Clone)]
pub struct StyleBranch {
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl StyleBranch {
    pub fn new(init: &mut Init, style_dim: usize, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            gamma: Conv2d::same(&mut init.sub("gamma"), style_dim, channels, kernel)?,
            beta: Conv2d::same(&mut init.sub("beta"), style_dim, channels, kernel)?,
        })
    }

    pub fn forward(&self, style_map: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.gamma.forward(style_map)?, self.beta.forward(style_map)?))
    }
}

/// `y = norm(x)·(1 + γ) + β`.
pub fn modulate(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    Ok(batch_normalize(x)?.mul(&(gamma + 1.0)?)?.add(beta)?)
}

/// Mask-only modulation.
#[derive(Debug, Clone)]
pub struct SpadeNorm {
    pub branch: MaskBranch,
}

impl SpadeNorm {
    pub fn new(init: &mut Init, n_regions: usize, hidden: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            branch: MaskBranch::new(init, n_regions, hidden, channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (g, b) = self.branch.forward(mask)?;
        modulate(x, &g, &b)
    }
}

/// Region-adaptive normalization blending mask and style modulation:
/// `γ = α·γ_s + (1−α)·γ_m`, likewise for β, with learned `α ∈ [0, 1]`.
///
/// Branches are present only when the corresponding input is enabled; with
/// neither, the layer is a plain normalization.
#[derive(Debug, Clone)]
pub struct SeanNorm {
    pub mask: Option<MaskBranch>,
    pub style: Option<StyleBranch>,
    /// Raw blend weight, clamped to [0, 1] when used. Present iff both branches are.
    pub alpha: Option<Tensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct NormSpec {
    pub n_regions: usize,
    pub style_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub use_mask: bool,
    pub use_style: bool,
}

impl SeanNorm {
    pub fn new(init: &mut Init, spec: &NormSpec, channels: usize) -> Result<Self> {
        let mask = if spec.use_mask {
            Some(MaskBranch::new(&mut init.sub("mask"), spec.n_regions, spec.hidden, channels)?)
        } else {
            None
        };
        let style = if spec.use_style {
            Some(StyleBranch::new(&mut init.sub("style"), spec.style_dim, channels, spec.kernel)?)
        } else {
            None
        };
        let alpha = if spec.use_mask && spec.use_style {
            Some(init.param("alpha", &[1], InitKind::Const(0.5))?)
        } else {
            None
        };
        Ok(Self { mask, style, alpha })
    }

    pub fn alpha_value(&self) -> Result<Option<Tensor>> {
        Ok(match &self.alpha {
            Some(a) => Some(a.clamp(0.0, 1.0)?),
            None => None,
        })
    }

    /// `mask`: (B, N, h, w) at x's resolution; `style_map`: (B, d, h, w).
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>, style_map: Option<&Tensor>) -> Result<Tensor> {
        let need = |what: &str| NnError::InvalidArgument(format!("normalization layer requires a {what}"));
        let from_mask = match &self.mask {
            Some(b) => Some(b.forward(mask.ok_or_else(|| need("mask"))?)?),
            None => None,
        };
        let from_style = match &self.style {
            Some(b) => Some(b.forward(style_map.ok_or_else(|| need("style map"))?)?),
            None => None,
        };
        match (from_mask, from_style) {
            (None, None) => batch_normalize(x),
            (Some((g, b)), None) | (None, Some((g, b))) => modulate(x, &g, &b),
            (Some((gm, bm)), Some((gs, bs))) => {
                let a = self.alpha_value()?.expect("alpha exists with both branches");
                let one_minus = a.neg()?.affine(1.0, 1.0)?;
                let blend = |s: &Tensor, m: &Tensor| -> Result<Tensor> {
                    Ok(s.broadcast_mul(&a)?.add(&m.broadcast_mul(&one_minus)?)?)
                };
                modulate(x, &blend(&gs, &gm)?, &blend(&bs, &bm)?)
            }
        }
    }
}
