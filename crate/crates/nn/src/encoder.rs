//! Style encoder: a resolution-specific stem (LR or HR), a shared squashing
//! layer, and regional average pooling into an N×d style matrix.

use candle_core::Tensor;
use deepsee_core::{ModelConfig, StyleSource};

use crate::conv::ConvSpec;
use crate::error::{shape_err, NnError, Result};
use crate::layers::Conv2d;
use crate::ops::{lrelu, regional_avg_pool, resize_mask, upsample_nearest};
use crate::params::Init;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderPath {
    Lr,
    Hr,
}

/// Four convolutions with a resampling step in the middle.
#[derive(Debug, Clone)]
pub struct Stem {
    pub convs: [Conv2d; 4],
    pub path: EncoderPath,
}

impl Stem {
    /// `Lr`: conv, conv, ×2 up, conv, conv (output at 2× input resolution).
    /// `Hr`: conv, stride-2 conv, stride-2 conv, ×2 up, conv (output at ½).
    pub fn new(init: &mut Init, path: EncoderPath, channels: [usize; 3], out: usize) -> Result<Self> {
        let [c0, c1, c2] = channels;
        let down = ConvSpec::new(2, 1, 1);
        let convs = match path {
            EncoderPath::Lr => [
                Conv2d::same(&mut init.sub("conv.0"), 3, c0, 3)?,
                Conv2d::same(&mut init.sub("conv.1"), c0, c1, 3)?,
                Conv2d::same(&mut init.sub("conv.2"), c1, c2, 3)?,
                Conv2d::same(&mut init.sub("conv.3"), c2, out, 3)?,
            ],
            EncoderPath::Hr => [
                Conv2d::same(&mut init.sub("conv.0"), 3, c0, 3)?,
                Conv2d::new(&mut init.sub("conv.1"), c0, c1, 3, down, true)?,
                Conv2d::new(&mut init.sub("conv.2"), c1, c2, 3, down, true)?,
                Conv2d::same(&mut init.sub("conv.3"), c2, out, 3)?,
            ],
        };
        Ok(Self { convs, path })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = &self.convs;
        let x = lrelu(&c[0].forward(x)?)?;
        let x = lrelu(&c[1].forward(&x)?)?;
        let x = match self.path {
            EncoderPath::Lr => upsample_nearest(&x, 2)?,
            EncoderPath::Hr => x,
        };
        let x = lrelu(&c[2].forward(&x)?)?;
        let x = match self.path {
            EncoderPath::Lr => x,
            EncoderPath::Hr => upsample_nearest(&x, 2)?,
        };
        lrelu(&c[3].forward(&x)?)
    }
}

#[derive(Debug, Clone)]
pub struct StyleEncoder {
    pub lr: Option<Stem>,
    pub hr: Option<Stem>,
    pub shared: Conv2d,
    pub scale: usize,
    pub n_regions: usize,
    pub use_mask: bool,
}

impl StyleEncoder {
    /// Builds the stems required by the configured style source; `None` when
    /// the configuration uses no style.
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Option<Self>> {
        let e = &cfg.encoder;
        let (lr, hr) = match cfg.style_source() {
            StyleSource::None => return Ok(None),
            StyleSource::InputLr | StyleSource::GuideLr => (true, false),
            StyleSource::GuideHr => (false, true),
        };
        Ok(Some(Self {
            lr: lr
                .then(|| Stem::new(&mut init.sub("lr"), EncoderPath::Lr, e.channels, e.shared_in))
                .transpose()?,
            hr: hr
                .then(|| Stem::new(&mut init.sub("hr"), EncoderPath::Hr, e.channels, e.shared_in))
                .transpose()?,
            shared: Conv2d::same(&mut init.sub("shared"), e.shared_in, cfg.style_dim, 3)?,
            scale: cfg.scale as usize,
            n_regions: cfg.n_regions,
            use_mask: cfg.ablation.use_semantics,
        }))
    }

    pub fn default_path(&self) -> EncoderPath {
        if self.lr.is_some() {
            EncoderPath::Lr
        } else {
            EncoderPath::Hr
        }
    }

    /// Per-pixel style features in [-1, 1] before pooling.
    pub fn features(&self, img: &Tensor, path: EncoderPath) -> Result<Tensor> {
        let stem = match path {
            EncoderPath::Lr => self.lr.as_ref(),
            EncoderPath::Hr => self.hr.as_ref(),
        }
        .ok_or_else(|| NnError::InvalidArgument(format!("encoder has no {path:?} path")))?;
        Ok(self.shared.forward(&stem.forward(img)?)?.tanh()?)
    }

    /// `img`: (B, 3, h, w) at the path's resolution; `mask`: (B, N, H_hr, W_hr),
    /// one-hot; ignored (whole image pooled into row 0) without semantics.
    /// Returns (B, N, d).
    pub fn encode(&self, img: &Tensor, mask: Option<&Tensor>, path: EncoderPath) -> Result<Tensor> {
        let (b, _, h, w) = img.dims4()?;
        if path == EncoderPath::Hr && (h % 4 != 0 || w % 4 != 0) {
            return Err(shape_err(format!("HR encoder input {h}x{w} must be divisible by 4")));
        }
        let feats = self.features(img, path)?;
        let (_, _, fh, fw) = feats.dims4()?;
        let pool_mask = if self.use_mask {
            let m = mask.ok_or_else(|| shape_err("encoder requires a semantic mask"))?;
            let (mb, mn, mh, mw) = m.dims4()?;
            let expected = match path {
                EncoderPath::Lr => (h * self.scale, w * self.scale),
                EncoderPath::Hr => (h, w),
            };
            if mb != b || mn != self.n_regions || (mh, mw) != expected {
                return Err(shape_err(format!(
                    "encoder mask {:?} does not match {path:?} input {h}x{w}",
                    m.dims()
                )));
            }
            resize_mask(&m.to_dtype(feats.dtype())?, fh, fw)?
        } else {
            region0_mask(b, self.n_regions, fh, fw, &feats)?
        };
        regional_avg_pool(&feats, &pool_mask)
    }
}

/// Mask assigning every pixel to region 0.
pub fn region0_mask(b: usize, n: usize, h: usize, w: usize, like: &Tensor) -> Result<Tensor> {
    let ones = Tensor::ones((b, 1, h, w), like.dtype(), like.device())?;
    if n == 1 {
        return Ok(ones);
    }
    let zeros = Tensor::zeros((b, n - 1, h, w), like.dtype(), like.device())?;
    Ok(Tensor::cat(&[&ones, &zeros], 1)?)
}
