//! LR → HR face parsing: a dilated-convolution encoder at LR followed by a
//! ×2-upsampling decoder and a per-pixel region classifier.

use candle_core::Tensor;
use deepsee_core::{ModelConfig, SemanticMask};

use crate::conv::ConvSpec;
use crate::error::{shape_err, Result};
use crate::layers::Conv2d;
use crate::ops::{lrelu, upsample_nearest};
use crate::params::Init;

#[derive(Debug, Clone)]
pub struct SegNet {
    pub stem: Conv2d,
    pub dilated: Vec<Conv2d>,
    pub decoder: Vec<Conv2d>,
    pub head: Conv2d,
    pub scale: usize,
    pub n_regions: usize,
}

impl SegNet {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let s = &cfg.segmentation;
        let c = s.channels;
        let dilated = s
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| Conv2d::new(&mut init.sub(format!("dilated.{i}")), c, c, 3, ConvSpec::new(1, d, d), true))
            .collect::<Result<_>>()?;
        let mut decoder = Vec::new();
        let mut ch = c;
        for i in 0..cfg.n_upsamples() {
            let out = (ch / 2).max(s.min_decoder_channels);
            decoder.push(Conv2d::same(&mut init.sub(format!("decoder.{i}")), ch, out, 3)?);
            ch = out;
        }
        Ok(Self {
            stem: Conv2d::same(&mut init.sub("stem"), 3, c, 3)?,
            dilated,
            decoder,
            head: Conv2d::new(&mut init.sub("head"), ch, cfg.n_regions, 1, ConvSpec::new(1, 0, 1), true)?,
            scale: cfg.scale as usize,
            n_regions: cfg.n_regions,
        })
    }

    /// (B, 3, h, w) → (B, N, h·scale, w·scale) logits.
    pub fn logits(&self, x_lr: &Tensor) -> Result<Tensor> {
        let mut h = lrelu(&self.stem.forward(x_lr)?)?;
        for conv in &self.dilated {
            h = (&h + lrelu(&conv.forward(&h)?)?)?;
        }
        for conv in &self.decoder {
            h = lrelu(&conv.forward(&upsample_nearest(&h, 2)?)?)?;
        }
        let logits = self.head.forward(&h)?;
        let (_, _, oh, ow) = logits.dims4()?;
        let (_, _, ih, iw) = x_lr.dims4()?;
        if (oh, ow) != (ih * self.scale, iw * self.scale) {
            return Err(shape_err(format!("segmentation output {oh}x{ow} for input {ih}x{iw}")));
        }
        Ok(logits)
    }

    pub fn predict(&self, x_lr: &Tensor) -> Result<Vec<SemanticMask>> {
        crate::convert::logits_to_masks(&self.logits(x_lr)?)
    }
}
