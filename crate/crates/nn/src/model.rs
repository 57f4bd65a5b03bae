//! The full model: style encoder, generator and discriminator over one
//! parameter store, plus single-image inference helpers.

use candle_core::{DType, Tensor};
use deepsee_core::{ImageTensor, ModelConfig, SemanticMask, StyleMatrix, StyleSource};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::convert::{images_to_tensor, masks_to_tensor, styles_to_tensor, tensor_to_images, tensor_to_styles};
use crate::discriminator::Discriminator;
use crate::encoder::{EncoderPath, StyleEncoder};
use crate::error::{NnError, Result};
use crate::generator::Generator;
use crate::params::ParamStore;
use crate::segmentation::SegNet;

pub const ENCODER: &str = "encoder";
pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";

#[derive(Debug, Clone)]
pub struct DeepSee {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Option<StyleEncoder>,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl DeepSee {
    pub fn new(config: &ModelConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, config.seed);
        let mut root = store.root();
        let encoder = StyleEncoder::new(&mut root.sub(ENCODER), config)?;
        let generator = Generator::new(&mut root.sub(GENERATOR), config)?;
        let discriminator = Discriminator::new(&mut root.sub(DISCRIMINATOR), config)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            generator,
            discriminator,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Model {
            return Err(NnError::Checkpoint("expected a model checkpoint".into()));
        }
        let model = Self::new(&ckpt.config, DType::F32)?;
        model.store.load_values(&ckpt.section("params"))?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Checkpoint holding only the weights (`params.*`).
    pub fn to_checkpoint(&self, state: serde_json::Value) -> Result<Checkpoint> {
        let tensors = self
            .store
            .snapshot()?
            .into_iter()
            .map(|(k, v)| (format!("params.{k}"), v))
            .collect();
        Ok(Checkpoint {
            kind: CheckpointKind::Model,
            config: self.config.clone(),
            tensors,
            state,
        })
    }

    fn encoder(&self) -> Result<&StyleEncoder> {
        self.encoder
            .as_ref()
            .ok_or_else(|| NnError::InvalidArgument("this configuration has no style encoder".into()))
    }

    /// Batched style encoding; see [`StyleEncoder::encode`].
    pub fn encode(&self, img: &Tensor, mask: Option<&Tensor>, path: EncoderPath) -> Result<Tensor> {
        self.encoder()?.encode(img, mask, path)
    }

    /// Encoder path matching the configured style source.
    pub fn style_path(&self) -> Option<EncoderPath> {
        match self.config.style_source() {
            StyleSource::None => None,
            StyleSource::InputLr | StyleSource::GuideLr => Some(EncoderPath::Lr),
            StyleSource::GuideHr => Some(EncoderPath::Hr),
        }
    }

    pub fn generate(&self, x_lr: &Tensor, mask: Option<&Tensor>, style: Option<&Tensor>) -> Result<Tensor> {
        self.generator.forward(x_lr, mask, style)
    }

    /// The model's own style for one image: from `x_lr` for independent
    /// models, from the guide (HR image with its mask, or its bicubic LR for
    /// LR-guided models) otherwise.
    pub fn default_style(
        &self,
        x_lr: &ImageTensor,
        mask: Option<&SemanticMask>,
        guide: Option<(&ImageTensor, &SemanticMask)>,
    ) -> Result<Option<StyleMatrix>> {
        let dtype = self.dtype();
        let (img, m, path) = match self.config.style_source() {
            StyleSource::None => return Ok(None),
            StyleSource::InputLr => (x_lr.clone(), mask.cloned(), EncoderPath::Lr),
            StyleSource::GuideHr | StyleSource::GuideLr => {
                let (g, gm) = guide.ok_or_else(|| {
                    NnError::InvalidArgument("guided model requires a guide image".into())
                })?;
                if self.config.style_source() == StyleSource::GuideHr {
                    (g.clone(), Some(gm.clone()), EncoderPath::Hr)
                } else {
                    let s = self.config.scale as usize;
                    let lr = deepsee_core::resample::bicubic_resample(g, g.height() / s, g.width() / s)?;
                    (lr, Some(gm.clone()), EncoderPath::Lr)
                }
            }
        };
        let m = if self.config.ablation.use_semantics {
            Some(m.ok_or_else(|| NnError::InvalidArgument("style encoding requires a mask".into()))?)
        } else {
            None
        };
        let img_t = images_to_tensor(&[&img], dtype)?;
        let mask_t = m.as_ref().map(|m| masks_to_tensor(&[m], dtype)).transpose()?;
        let s = self.encode(&img_t, mask_t.as_ref(), path)?;
        Ok(tensor_to_styles(&s)?.pop())
    }

    /// Encodes an arbitrary image of matching resolution with the LR (or HR) path.
    pub fn encode_image(&self, img: &ImageTensor, mask: Option<&SemanticMask>, path: EncoderPath) -> Result<StyleMatrix> {
        let dtype = self.dtype();
        let img_t = images_to_tensor(&[img], dtype)?;
        let mask_t = match (self.config.ablation.use_semantics, mask) {
            (true, Some(m)) => Some(masks_to_tensor(&[m], dtype)?),
            (true, None) => return Err(NnError::InvalidArgument("style encoding requires a mask".into())),
            (false, _) => None,
        };
        let s = self.encode(&img_t, mask_t.as_ref(), path)?;
        Ok(tensor_to_styles(&s)?.pop().expect("batch of one"))
    }

    /// Single-image super-resolution. Inputs for disabled paths are ignored
    /// with a warning.
    pub fn super_resolve(
        &self,
        x_lr: &ImageTensor,
        mask: Option<&SemanticMask>,
        style: Option<&StyleMatrix>,
    ) -> Result<ImageTensor> {
        let dtype = self.dtype();
        let a = self.config.ablation;
        if mask.is_some() && !a.use_semantics {
            log::warn!("semantic mask ignored: model trained without semantics");
        }
        if style.is_some() && !a.uses_style() {
            log::warn!("style matrix ignored: model trained without style");
        }
        let x = images_to_tensor(&[x_lr], dtype)?;
        let m = match (a.use_semantics, mask) {
            (true, Some(m)) => Some(masks_to_tensor(&[m], dtype)?),
            (true, None) => return Err(NnError::InvalidArgument("model requires a semantic mask".into())),
            _ => None,
        };
        let s = match (a.uses_style(), style) {
            (true, Some(s)) => Some(styles_to_tensor(&[s], dtype)?),
            (true, None) => return Err(NnError::InvalidArgument("model requires a style matrix".into())),
            _ => None,
        };
        let out = self.generate(&x, m.as_ref(), s.as_ref())?;
        Ok(tensor_to_images(&out)?.pop().expect("batch of one"))
    }
}

/// Segmentation network with its own parameter store and checkpoint.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub net: SegNet,
}

impl Segmenter {
    pub fn new(config: &ModelConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, config.seed ^ 0x5e9);
        let net = SegNet::new(&mut store.root().sub("seg"), config)?;
        Ok(Self {
            config: config.clone(),
            store,
            net,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Segmentation {
            return Err(NnError::Checkpoint("expected a segmentation checkpoint".into()));
        }
        let s = Self::new(&ckpt.config, DType::F32)?;
        s.store.load_values(&ckpt.section("params"))?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn to_checkpoint(&self, state: serde_json::Value) -> Result<Checkpoint> {
        let tensors = self
            .store
            .snapshot()?
            .into_iter()
            .map(|(k, v)| (format!("params.{k}"), v))
            .collect();
        Ok(Checkpoint {
            kind: CheckpointKind::Segmentation,
            config: self.config.clone(),
            tensors,
            state,
        })
    }

    pub fn predict(&self, x_lr: &ImageTensor) -> Result<SemanticMask> {
        let x = images_to_tensor(&[x_lr], self.store.dtype())?;
        Ok(self.net.predict(&x)?.pop().expect("batch of one"))
    }
}
