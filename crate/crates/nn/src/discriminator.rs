//! Multi-scale patch discriminator conditioned on the semantic mask.

use candle_core::Tensor;
use deepsee_core::ModelConfig;

use crate::conv::ConvSpec;
use crate::error::{shape_err, Result};
use crate::layers::Conv2d;
use crate::ops::{avg_pool, lrelu};
use crate::params::Init;

#[derive(Debug, Clone)]
pub struct PatchOutput {
    pub logits: Tensor,
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct PatchNet {
    pub layers: Vec<Conv2d>,
    pub head: Conv2d,
}

impl PatchNet {
    pub fn new(init: &mut Init, c_in: usize, base: usize, max: usize, n_layers: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(n_layers);
        let mut c = c_in;
        for i in 0..n_layers {
            let out = (base << i).min(max);
            let stride = if i + 1 == n_layers { 1 } else { 2 };
            layers.push(Conv2d::new(&mut init.sub(format!("layer.{i}")), c, out, 4, ConvSpec::new(stride, 2, 1), true)?);
            c = out;
        }
        Ok(Self {
            layers,
            head: Conv2d::new(&mut init.sub("head"), c, 1, 4, ConvSpec::new(1, 2, 1), true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<PatchOutput> {
        let mut features = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            h = lrelu(&l.forward(&h)?)?;
            features.push(h.clone());
        }
        Ok(PatchOutput {
            logits: self.head.forward(&h)?,
            features,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub scales: Vec<PatchNet>,
    pub use_mask: bool,
    pub n_regions: usize,
}

impl Discriminator {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let d = &cfg.discriminator;
        let use_mask = cfg.ablation.use_semantics;
        let c_in = 3 + if use_mask { cfg.n_regions } else { 0 };
        let scales = (0..d.n_scales)
            .map(|s| PatchNet::new(&mut init.sub(format!("scale.{s}")), c_in, d.base_channels, d.max_channels, d.n_layers))
            .collect::<Result<_>>()?;
        Ok(Self {
            scales,
            use_mask,
            n_regions: cfg.n_regions,
        })
    }

    /// One output per scale: full resolution first, then successive 2× average pools.
    pub fn forward(&self, img: &Tensor, mask: Option<&Tensor>) -> Result<Vec<PatchOutput>> {
        let mut x = if self.use_mask {
            let m = mask.ok_or_else(|| shape_err("discriminator requires a semantic mask"))?;
            let (ib, _, ih, iw) = img.dims4()?;
            let (mb, mn, mh, mw) = m.dims4()?;
            if (mb, mn, mh, mw) != (ib, self.n_regions, ih, iw) {
                return Err(shape_err(format!("discriminator mask {:?} vs image {:?}", m.dims(), img.dims())));
            }
            Tensor::cat(&[img, &m.to_dtype(img.dtype())?], 1)?
        } else {
            img.clone()
        };
        let mut out = Vec::with_capacity(self.scales.len());
        for (i, net) in self.scales.iter().enumerate() {
            if i > 0 {
                x = avg_pool(&x, 2)?;
            }
            out.push(net.forward(&x)?);
        }
        Ok(out)
    }
}
