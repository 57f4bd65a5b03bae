//! Frozen feature extractors for the perceptual loss, LPIPS and FID.
//!
//! Each VGG-style network can be loaded from torchvision weights or built as
//! a seeded, narrow stand-in with the same topology for offline use.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::conv::ConvSpec;
use crate::error::{NnError, Result};
use crate::layers::Conv2d;
use crate::params::{InitKind, ParamStore};

pub trait FeatureExtractor: Send + Sync {
    /// Activations at five depths for a batch of images in [-1, 1].
    fn stages(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    fn name(&self) -> &str;
}

const M: usize = 0;
const VGG19_CFG: [usize; 21] = [64, 64, M, 128, 128, M, 256, 256, 256, 256, M, 512, 512, 512, 512, M, 512, 512, 512, 512, M];
const VGG16_CFG: [usize; 18] = [64, 64, M, 128, 128, M, 256, 256, 256, M, 512, 512, 512, M, 512, 512, 512, M];
/// 1-based conv counts after which activations are tapped.
const VGG19_TAPS: [usize; 5] = [1, 3, 5, 9, 13];
const VGG16_TAPS: [usize; 5] = [2, 4, 7, 10, 13];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
const LPIPS_SHIFT: [f64; 3] = [-0.030, -0.088, -0.188];
const LPIPS_SCALE: [f64; 3] = [0.458, 0.448, 0.450];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VggKind {
    /// VGG-19, relu{1..5}_1 (perceptual loss).
    Vgg19,
    /// VGG-16, relu{1..5}_{2,2,3,3,3} (LPIPS).
    Vgg16,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv2d),
    Pool,
}

#[derive(Debug, Clone)]
pub struct Vgg {
    layers: Vec<Layer>,
    /// Layer index after which each stage is tapped.
    taps: Vec<usize>,
    shift: [f64; 3],
    scale: [f64; 3],
    name: String,
}

fn arch(kind: VggKind) -> (&'static [usize], &'static [usize]) {
    match kind {
        VggKind::Vgg19 => (&VGG19_CFG, &VGG19_TAPS),
        VggKind::Vgg16 => (&VGG16_CFG, &VGG16_TAPS),
    }
}

impl Vgg {
    fn build(
        kind: VggKind,
        divisor: usize,
        mut conv: impl FnMut(usize, usize, usize) -> Result<Conv2d>,
    ) -> Result<Self> {
        let (cfg, taps) = arch(kind);
        let last_tap = *taps.last().unwrap();
        let mut layers = Vec::new();
        let mut tap_layers = Vec::new();
        let mut c_in = 3;
        let mut n_conv = 0;
        // torchvision numbering: each conv+relu takes two indices, each pool one.
        let mut torch_index = 0;
        for &c in cfg {
            if n_conv == last_tap {
                break;
            }
            if c == M {
                layers.push(Layer::Pool);
                torch_index += 1;
                continue;
            }
            let c_out = (c / divisor).max(1);
            layers.push(Layer::Conv(conv(torch_index, c_in, c_out)?));
            n_conv += 1;
            if taps.contains(&n_conv) {
                tap_layers.push(layers.len() - 1);
            }
            c_in = c_out;
            torch_index += 2;
        }
        let (shift, scale) = match kind {
            VggKind::Vgg19 => (
                IMAGENET_MEAN.map(|m| 2.0 * m - 1.0),
                IMAGENET_STD.map(|s| 2.0 * s),
            ),
            VggKind::Vgg16 => (LPIPS_SHIFT, LPIPS_SCALE),
        };
        Ok(Self {
            layers,
            taps: tap_layers,
            shift,
            scale,
            name: String::new(),
        })
    }

    /// Loads torchvision `features.*` weights from a `.pth` file.
    pub fn from_torchvision(kind: VggKind, path: &Path, dtype: DType) -> Result<Self> {
        let tensors: HashMap<String, Tensor> = candle_core::pickle::read_all(path)?.into_iter().collect();
        let get = |k: &str| {
            tensors
                .get(k)
                .ok_or_else(|| NnError::Checkpoint(format!("{}: missing `{k}`", path.display())))
                .and_then(|t| Ok(t.to_dtype(dtype)?))
        };
        let mut vgg = Self::build(kind, 1, |idx, c_in, c_out| {
            let weight = get(&format!("features.{idx}.weight"))?;
            let bias = get(&format!("features.{idx}.bias"))?;
            if weight.dims() != [c_out, c_in, 3, 3] {
                return Err(NnError::Checkpoint(format!(
                    "features.{idx}.weight has shape {:?}",
                    weight.dims()
                )));
            }
            Ok(Conv2d {
                weight,
                bias: Some(bias),
                spec: ConvSpec::same(3),
            })
        })?;
        vgg.name = format!("{kind:?}").to_lowercase();
        Ok(vgg)
    }

    /// Randomly initialized network with the same topology, widths divided by
    /// `divisor`, He-normal weights from `seed`.
    pub fn stand_in(kind: VggKind, divisor: usize, seed: u64, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        let mut root = store.root();
        let mut vgg = Self::build(kind, divisor, |idx, c_in, c_out| {
            let mut s = root.sub(format!("features.{idx}"));
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            Ok(Conv2d {
                weight: s.param("weight", &[c_out, c_in, 3, 3], InitKind::Normal(std))?.detach(),
                bias: Some(s.param("bias", &[c_out], InitKind::Const(0.0))?.detach()),
                spec: ConvSpec::same(3),
            })
        })?;
        vgg.name = format!("{kind:?}-standin-{divisor}-{seed}").to_lowercase();
        Ok(vgg)
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.taps
            .iter()
            .map(|&i| match &self.layers[i] {
                Layer::Conv(c) => c.out_channels(),
                Layer::Pool => unreachable!("taps follow convolutions"),
            })
            .collect()
    }

    fn normalize_input(&self, x: &Tensor) -> Result<Tensor> {
        let dev = x.device();
        let shift = Tensor::new(&self.shift, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
        let scale = Tensor::new(&self.scale, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
        Ok(x.broadcast_sub(&shift)?.broadcast_div(&scale)?)
    }
}

/// 2×2 max pooling (stride 2; odd trailing rows/cols dropped).
fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let x = x.narrow(2, 0, h / 2 * 2)?.narrow(3, 0, w / 2 * 2)?.contiguous()?;
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

impl FeatureExtractor for Vgg {
    fn stages(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = self.normalize_input(x)?;
        let mut out = Vec::with_capacity(self.taps.len());
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Conv(c) => c.forward(&h)?.relu()?,
                Layer::Pool => max_pool2(&h)?,
            };
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Learned perceptual distance: unit-normalized VGG-16 activations, per-channel
/// linear weights, spatial mean, summed over stages.
#[derive(Debug, Clone)]
pub struct Lpips {
    pub net: Vgg,
    /// One non-negative weight vector per stage.
    pub lin: Vec<Tensor>,
}

impl Lpips {
    pub fn from_files(vgg16: &Path, lin: &Path, dtype: DType) -> Result<Self> {
        let net = Vgg::from_torchvision(VggKind::Vgg16, vgg16, dtype)?;
        let tensors: HashMap<String, Tensor> = candle_core::pickle::read_all(lin)?.into_iter().collect();
        let lin = (0..5)
            .map(|i| {
                let k = format!("lin{i}.model.1.weight");
                let t = tensors
                    .get(&k)
                    .ok_or_else(|| NnError::Checkpoint(format!("{}: missing `{k}`", lin.display())))?;
                Ok(t.flatten_all()?.to_dtype(dtype)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(net, lin)
    }

    /// Stand-in backbone with all linear weights equal to one.
    pub fn stand_in(divisor: usize, seed: u64, dtype: DType) -> Result<Self> {
        let net = Vgg::stand_in(VggKind::Vgg16, divisor, seed, dtype)?;
        let lin = net
            .stage_channels()
            .iter()
            .map(|&c| Ok(Tensor::ones(c, dtype, &Device::Cpu)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(net, lin)
    }

    fn new(net: Vgg, lin: Vec<Tensor>) -> Result<Self> {
        let chans = net.stage_channels();
        if lin.len() != chans.len() || lin.iter().zip(&chans).any(|(l, &c)| l.elem_count() != c) {
            return Err(NnError::Checkpoint("LPIPS linear weights do not match backbone".into()));
        }
        Ok(Self { net, lin })
    }

    /// Per-item distances, shape (B,).
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(NnError::Shape(format!("lpips: {:?} vs {:?}", a.dims(), b.dims())));
        }
        let fa = self.net.stages(a)?;
        let fb = self.net.stages(b)?;
        let mut total: Option<Tensor> = None;
        for ((x, y), w) in fa.iter().zip(&fb).zip(&self.lin) {
            let d = (unit(x)? - unit(y)?)?.sqr()?;
            let c = w.elem_count();
            let d = d.broadcast_mul(&w.reshape((1, c, 1, 1))?)?.sum(1)?.mean(2)?.mean(1)?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        Ok(total.expect("five stages"))
    }
}

fn unit(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)?.sqrt()? + 1e-10)?;
    Ok(x.broadcast_div(&norm)?)
}

/// Global embeddings for distribution metrics.
pub trait Embedder: Send + Sync {
    /// (B, D) embeddings for images in [-1, 1].
    fn embed(&self, x: &Tensor) -> Result<Tensor>;

    fn name(&self) -> &str;
}

/// Spatial means of every VGG stage, concatenated.
pub struct VggEmbedder(pub Vgg);

impl Embedder for VggEmbedder {
    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let stages = self.0.stages(x)?;
        let pooled = stages
            .iter()
            .map(|s| Ok(s.mean(3)?.mean(2)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&pooled, 1)?)
    }

    fn name(&self) -> &str {
        self.0.name()
    }
}
