//! Upscaling generator: residual blocks with nearest ×2 upsampling, each
//! modulated by mask and/or style.

use candle_core::Tensor;
use deepsee_core::ModelConfig;

use crate::conv::ConvSpec;
use crate::error::{shape_err, Result};
use crate::layers::Conv2d;
use crate::norm::{NormSpec, SeanNorm};
use crate::ops::{broadcast_style, lrelu, resize_mask, upsample_nearest};
use crate::params::Init;

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm_0: SeanNorm,
    pub conv_0: Conv2d,
    pub norm_1: SeanNorm,
    pub conv_1: Conv2d,
    pub shortcut: Option<(SeanNorm, Conv2d)>,
}

impl ResBlock {
    pub fn new(init: &mut Init, spec: &NormSpec, c_in: usize, c_out: usize) -> Result<Self> {
        let mid = c_in.min(c_out);
        let shortcut = if c_in != c_out {
            Some((
                SeanNorm::new(&mut init.sub("norm_s"), spec, c_in)?,
                Conv2d::new(&mut init.sub("conv_s"), c_in, c_out, 1, ConvSpec::new(1, 0, 1), false)?,
            ))
        } else {
            None
        };
        Ok(Self {
            norm_0: SeanNorm::new(&mut init.sub("norm_0"), spec, c_in)?,
            conv_0: Conv2d::same(&mut init.sub("conv_0"), c_in, mid, 3)?,
            norm_1: SeanNorm::new(&mut init.sub("norm_1"), spec, mid)?,
            conv_1: Conv2d::same(&mut init.sub("conv_1"), mid, c_out, 3)?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>, style_map: Option<&Tensor>) -> Result<Tensor> {
        let dx = self.conv_0.forward(&lrelu(&self.norm_0.forward(x, mask, style_map)?)?)?;
        let dx = self.conv_1.forward(&lrelu(&self.norm_1.forward(&dx, mask, style_map)?)?)?;
        let xs = match &self.shortcut {
            Some((norm, conv)) => conv.forward(&norm.forward(x, mask, style_map)?)?,
            None => x.clone(),
        };
        Ok((xs + dx)?)
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub head: Conv2d,
    pub extra: Vec<ResBlock>,
    pub up: Vec<ResBlock>,
    pub tail: Conv2d,
    pub scale: usize,
    pub use_mask: bool,
    pub use_style: bool,
    pub n_regions: usize,
    pub style_dim: usize,
}

/// Channel width after `i` doublings out of `n`.
pub fn channel_schedule(cfg: &ModelConfig) -> Vec<usize> {
    let n = cfg.n_upsamples();
    let g = &cfg.generator;
    (0..=n)
        .map(|i| (g.base_channels << (n - i)).min(g.max_channels))
        .collect()
}

impl Generator {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let spec = NormSpec {
            n_regions: cfg.n_regions,
            style_dim: cfg.style_dim,
            hidden: cfg.generator.norm_hidden,
            kernel: cfg.generator.modulation_kernel,
            use_mask: cfg.ablation.use_semantics,
            use_style: cfg.ablation.uses_style(),
        };
        let ch = channel_schedule(cfg);
        let extra = (0..cfg.generator.extra_blocks)
            .map(|i| ResBlock::new(&mut init.sub(format!("extra.{i}")), &spec, ch[0], ch[0]))
            .collect::<Result<_>>()?;
        let up = (0..cfg.n_upsamples())
            .map(|i| ResBlock::new(&mut init.sub(format!("up.{i}")), &spec, ch[i], ch[i + 1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            head: Conv2d::same(&mut init.sub("head"), 3, ch[0], 3)?,
            extra,
            up,
            tail: Conv2d::same(&mut init.sub("tail"), *ch.last().unwrap(), 3, 3)?,
            scale: cfg.scale as usize,
            use_mask: spec.use_mask,
            use_style: spec.use_style,
            n_regions: cfg.n_regions,
            style_dim: cfg.style_dim,
        })
    }

    /// `x_lr`: (B, 3, h, w); `mask`: one-hot (B, N, h·scale, w·scale);
    /// `style`: (B, N, d). Inputs of disabled paths are ignored.
    pub fn forward(&self, x_lr: &Tensor, mask: Option<&Tensor>, style: Option<&Tensor>) -> Result<Tensor> {
        let (b, _, h, w) = x_lr.dims4()?;
        let (hh, hw) = (h * self.scale, w * self.scale);
        let mask = if self.use_mask {
            let m = mask.ok_or_else(|| shape_err("generator requires a semantic mask"))?;
            let (mb, mn, mh, mw) = m.dims4()?;
            if (mb, mn, mh, mw) != (b, self.n_regions, hh, hw) {
                return Err(shape_err(format!(
                    "mask {:?} does not match LR {h}x{w} at scale {} (expected ({b}, {}, {hh}, {hw}))",
                    m.dims(),
                    self.scale,
                    self.n_regions
                )));
            }
            Some(m.to_dtype(x_lr.dtype())?)
        } else {
            None
        };
        let style = if self.use_style {
            let s = style.ok_or_else(|| shape_err("generator requires a style matrix"))?;
            if s.dims() != [b, self.n_regions, self.style_dim] {
                return Err(shape_err(format!(
                    "style {:?}, expected ({b}, {}, {})",
                    s.dims(),
                    self.n_regions,
                    self.style_dim
                )));
            }
            Some(s.to_dtype(x_lr.dtype())?)
        } else {
            None
        };

        let at = |rh: usize, rw: usize| -> Result<(Option<Tensor>, Option<Tensor>)> {
            let m = mask.as_ref().map(|m| resize_mask(m, rh, rw)).transpose()?;
            let sm = match (&style, &m) {
                (Some(s), Some(m)) => Some(broadcast_style(s, m)?),
                // Without semantics the whole image is one region: row 0 everywhere.
                (Some(s), None) => Some(
                    s.narrow(1, 0, 1)?
                        .transpose(1, 2)?
                        .reshape((b, self.style_dim, 1, 1))?
                        .broadcast_as((b, self.style_dim, rh, rw))?
                        .contiguous()?,
                ),
                _ => None,
            };
            Ok((m, sm))
        };

        let mut x = self.head.forward(x_lr)?;
        let (mut rh, mut rw) = (h, w);
        let (m, sm) = at(rh, rw)?;
        for block in &self.extra {
            x = block.forward(&x, m.as_ref(), sm.as_ref())?;
        }
        for block in &self.up {
            x = upsample_nearest(&x, 2)?;
            rh *= 2;
            rw *= 2;
            let (m, sm) = at(rh, rw)?;
            x = block.forward(&x, m.as_ref(), sm.as_ref())?;
        }
        Ok(self.tail.forward(&lrelu(&x)?)?.tanh()?)
    }

    /// All normalization layers, in forward order.
    pub fn norms(&self) -> Vec<&SeanNorm> {
        let mut out = Vec::new();
        for b in self.extra.iter().chain(self.up.iter()) {
            out.push(&b.norm_0);
            out.push(&b.norm_1);
            if let Some((n, _)) = &b.shortcut {
                out.push(n);
            }
        }
        out
    }
}
