//! Model and training configuration, including the ablation presets.
//!
//! Configs are stored as versioned TOML. Every hyperparameter that the
//! networks or the trainer read lives here so a checkpoint can embed a
//! complete description of the model that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::regions::N_REGIONS;

pub const CONFIG_VERSION: u32 = 1;

pub const SUPPORTED_SCALES: [u32; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Style encoded from the low-resolution input itself.
    Independent,
    /// Style encoded from a reference image of the same person.
    Guided,
}

/// Which conditioning paths the generator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_semantics: bool,
    pub use_lr_style: bool,
    pub use_hr_style: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_semantics: true,
        use_lr_style: true,
        use_hr_style: true,
    };

    pub fn uses_style(&self) -> bool {
        self.use_lr_style || self.use_hr_style
    }
}

/// Where the style matrix fed to the generator comes from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleSource {
    None,
    /// `E_lr` on the input itself.
    InputLr,
    /// `E_lr` on a downsampled reference image of the same identity.
    GuideLr,
    /// `E_hr` on the high-resolution reference image.
    GuideHr,
}

pub const ABLATION_NAMES: [&str; 6] = [
    "prior-only",
    "lr-style-only",
    "hr-style-only",
    "semantics-only",
    "independent",
    "guided",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Channel width at the output resolution; doubles per level towards the input.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Residual blocks run at the input resolution before the first upsample.
    pub extra_blocks: usize,
    /// Hidden width of the mask branch inside each modulated normalization.
    pub norm_hidden: usize,
    /// Kernel size of the convolutions that predict modulation maps.
    pub modulation_kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            max_channels: 512,
            extra_blocks: 1,
            norm_hidden: 128,
            modulation_kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Widths of the first three convolutions of `E_lr` and `E_hr`.
    pub channels: [usize; 3],
    /// Width of the feature map handed to the shared layer.
    pub shared_in: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: [64, 128, 128],
            shared_in: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub max_channels: usize,
    /// Intermediate (feature-emitting) layers per scale.
    pub n_layers: usize,
    pub n_scales: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            max_channels: 512,
            n_layers: 4,
            n_scales: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub channels: usize,
    pub dilations: Vec<usize>,
    /// Narrowest decoder width; the decoder halves channels per upsample down to this.
    pub min_decoder_channels: usize,
    pub lr: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            dilations: vec![1, 2, 4, 8],
            min_decoder_channels: 16,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_feat: f64,
    pub lambda_vgg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_feat: 10.0,
            lambda_vgg: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 4e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps (overrides `epochs` when reached first).
    pub max_steps: Option<u64>,
    /// High-resolution side length images are resized to before pairing.
    pub hr_size: Option<u32>,
    pub hflip: bool,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 7,
            max_steps: None,
            hr_size: None,
            hflip: true,
            checkpoint_every: 1000,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub version: u32,
    pub scale: u32,
    pub n_regions: usize,
    pub style_dim: usize,
    pub variant: Variant,
    pub ablation: Ablation,
    /// Half-width of the uniform style noise injected during training.
    pub noise_delta: f32,
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            scale: 8,
            n_regions: N_REGIONS,
            style_dim: 512,
            variant: Variant::Independent,
            ablation: Ablation {
                use_semantics: true,
                use_lr_style: true,
                use_hr_style: false,
            },
            noise_delta: default_delta(Variant::Independent),
            seed: 0,
            generator: GeneratorConfig::default(),
            encoder: EncoderConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            segmentation: SegmentationConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Noise half-width per variant.
pub fn default_delta(variant: Variant) -> f32 {
    match variant {
        Variant::Independent => 0.2,
        Variant::Guided => 0.05,
    }
}

/// Switches and variant for one of the six ablation presets.
pub fn ablation_preset(name: &str) -> Result<(Variant, Ablation)> {
    let (variant, s, lr, hr) = match name {
        "prior-only" => (Variant::Independent, false, false, false),
        "lr-style-only" => (Variant::Guided, false, true, false),
        "hr-style-only" => (Variant::Guided, false, false, true),
        "semantics-only" => (Variant::Independent, true, false, false),
        "independent" => (Variant::Independent, true, true, false),
        "guided" => (Variant::Guided, true, true, true),
        other => {
            return Err(CoreError::Config(format!(
                "unknown ablation `{other}`; valid names: {}",
                ABLATION_NAMES.join(", ")
            )))
        }
    };
    Ok((
        variant,
        Ablation {
            use_semantics: s,
            use_lr_style: lr,
            use_hr_style: hr,
        },
    ))
}

/// Default config with the named preset's switches and variant applied.
pub fn make_ablation_config(name: &str) -> Result<ModelConfig> {
    ModelConfig::default().with_ablation(name)
}

impl ModelConfig {
    /// A CPU-sized model: same topology, narrow widths.
    pub fn desk(scale: u32) -> Self {
        Self {
            scale,
            style_dim: 16,
            generator: GeneratorConfig {
                base_channels: 8,
                max_channels: 32,
                extra_blocks: 1,
                norm_hidden: 8,
                modulation_kernel: 3,
            },
            encoder: EncoderConfig {
                channels: [8, 16, 16],
                shared_in: 16,
            },
            discriminator: DiscriminatorConfig {
                base_channels: 8,
                max_channels: 32,
                n_layers: 4,
                n_scales: 2,
            },
            segmentation: SegmentationConfig {
                channels: 16,
                dilations: vec![1, 2, 4],
                min_decoder_channels: 8,
                lr: 2e-3,
            },
            ..Self::default()
        }
    }

    /// Minimal widths (8 channels, d = 8, 4 regions) for numerical checks.
    pub fn tiny(scale: u32) -> Self {
        Self {
            scale,
            n_regions: 4,
            style_dim: 8,
            generator: GeneratorConfig {
                base_channels: 8,
                max_channels: 8,
                extra_blocks: 1,
                norm_hidden: 8,
                modulation_kernel: 3,
            },
            encoder: EncoderConfig {
                channels: [8, 8, 8],
                shared_in: 8,
            },
            discriminator: DiscriminatorConfig {
                base_channels: 8,
                max_channels: 8,
                n_layers: 3,
                n_scales: 2,
            },
            segmentation: SegmentationConfig {
                channels: 8,
                dilations: vec![1, 2],
                min_decoder_channels: 8,
                lr: 2e-3,
            },
            ..Self::default()
        }
    }

    /// Applies a named ablation preset, keeping all widths. The noise width
    /// follows the preset's variant.
    pub fn with_ablation(mut self, name: &str) -> Result<Self> {
        let (variant, ablation) = ablation_preset(name)?;
        self.variant = variant;
        self.ablation = ablation;
        self.noise_delta = default_delta(variant);
        Ok(self)
    }

    pub fn n_upsamples(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// Total residual blocks: one per doubling plus the extra input-resolution blocks.
    pub fn n_up_blocks(&self) -> usize {
        self.n_upsamples() + self.generator.extra_blocks
    }

    pub fn style_source(&self) -> StyleSource {
        let a = self.ablation;
        match (self.variant, a.use_lr_style, a.use_hr_style) {
            (_, false, false) => StyleSource::None,
            (Variant::Independent, _, _) => StyleSource::InputLr,
            (Variant::Guided, _, true) => StyleSource::GuideHr,
            (Variant::Guided, true, false) => StyleSource::GuideLr,
        }
    }

    pub fn needs_guide(&self) -> bool {
        matches!(
            self.style_source(),
            StyleSource::GuideLr | StyleSource::GuideHr
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if !SUPPORTED_SCALES.contains(&self.scale) {
            return bad(format!(
                "scale must be one of {SUPPORTED_SCALES:?}, got {}",
                self.scale
            ));
        }
        if self.n_regions == 0 || self.n_regions > 256 {
            return bad(format!("n_regions must be in 1..=256, got {}", self.n_regions));
        }
        if self.style_dim == 0 {
            return bad("style_dim must be positive".into());
        }
        if !(self.noise_delta >= 0.0) {
            return bad(format!("noise_delta must be >= 0, got {}", self.noise_delta));
        }
        if !(self.loss.lambda_feat >= 0.0 && self.loss.lambda_vgg >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if self.variant == Variant::Independent && self.ablation.use_hr_style {
            return bad("the independent variant cannot use high-resolution style".into());
        }
        if self.variant == Variant::Guided && !self.ablation.uses_style() {
            return bad("the guided variant needs a style path".into());
        }
        let g = &self.generator;
        if g.base_channels == 0 || g.max_channels < g.base_channels || g.norm_hidden == 0 {
            return bad("generator widths must be positive with max >= base".into());
        }
        if g.modulation_kernel % 2 == 0 {
            return bad("modulation_kernel must be odd".into());
        }
        if self.encoder.channels.iter().any(|&c| c == 0) || self.encoder.shared_in == 0 {
            return bad("encoder widths must be positive".into());
        }
        let d = &self.discriminator;
        if d.n_layers < 2 || d.n_scales == 0 || d.base_channels == 0 {
            return bad("discriminator needs >= 2 layers, >= 1 scale".into());
        }
        if self.segmentation.dilations.is_empty() || self.segmentation.channels == 0 {
            return bad("segmentation needs channels and at least one dilation".into());
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(hr) = self.train.hr_size {
            if hr % self.scale != 0 {
                return bad(format!("hr_size {hr} not divisible by scale {}", self.scale));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Serde(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| CoreError::io(path, e))
    }
}
