//! Alternating discriminator / generator+encoder updates.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use deepsee_core::ModelConfig;
use deepsee_nn::checkpoint::{Checkpoint, CheckpointKind};
use deepsee_nn::encoder::EncoderPath;
use deepsee_nn::losses::{
    adv_loss_d, adv_loss_g, feat_match_outputs, patch_accuracy, perceptual_loss, total_loss, LossWeights,
};
use deepsee_nn::model::{DISCRIMINATOR, ENCODER, GENERATOR};
use deepsee_nn::ops::scalar;
use deepsee_nn::{DeepSee, FeatureExtractor, NnError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::optim::{Adam, AdamConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub g_adv: f64,
    pub g_feat: f64,
    pub g_vgg: f64,
    pub d_accuracy: f64,
    pub seconds: f64,
}

/// Moving averages over a fixed window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub window: usize,
    pub recent_g: VecDeque<f64>,
    pub recent_d_acc: VecDeque<f64>,
}

impl RunningStats {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            ..Default::default()
        }
    }

    pub fn push(&mut self, log: &StepLog) {
        for (q, v) in [(&mut self.recent_g, log.loss_g), (&mut self.recent_d_acc, log.d_accuracy)] {
            q.push_back(v);
            if q.len() > self.window {
                q.pop_front();
            }
        }
    }

    pub fn mean_g(&self) -> f64 {
        mean(&self.recent_g)
    }

    pub fn mean_d_accuracy(&self) -> f64 {
        mean(&self.recent_d_acc)
    }
}

fn mean(q: &VecDeque<f64>) -> f64 {
    if q.is_empty() {
        f64::NAN
    } else {
        q.iter().sum::<f64>() / q.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SavedState {
    step: u64,
    epoch: u64,
    opt_g_steps: u64,
    opt_d_steps: u64,
    stats: RunningStats,
}

pub struct Trainer {
    pub model: DeepSee,
    pub extractor: Box<dyn FeatureExtractor>,
    opt_g: Adam,
    opt_d: Adam,
    weights: LossWeights,
    pub step: u64,
    pub epoch: u64,
    pub stats: RunningStats,
}

impl Trainer {
    pub fn new(config: &ModelConfig, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        let model = DeepSee::new(config, DType::F32)?;
        Self::with_model(model, extractor)
    }

    pub fn with_model(model: DeepSee, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        let o = &model.config.optim;
        let cfg = |lr| AdamConfig {
            lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        };
        let opt_g = Adam::new(model.store.group(&[ENCODER, GENERATOR]), cfg(o.lr_g))?;
        let opt_d = Adam::new(model.store.group(&[DISCRIMINATOR]), cfg(o.lr_d))?;
        let weights = LossWeights::new(model.config.loss.lambda_feat, model.config.loss.lambda_vgg)?;
        Ok(Self {
            model,
            extractor,
            opt_g,
            opt_d,
            weights,
            step: 0,
            epoch: 0,
            stats: RunningStats::new(50),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Style fed to the generator for `batch`, before noise.
    pub fn encode_batch(&self, batch: &Batch) -> Result<Option<Tensor>> {
        let cfg = &self.model.config;
        let mask = cfg.ablation.use_semantics.then_some(&batch.mask);
        use deepsee_core::StyleSource::*;
        Ok(match cfg.style_source() {
            None => Option::None,
            InputLr => Some(self.model.encode(&batch.x_lr, mask, EncoderPath::Lr)?),
            GuideHr | GuideLr => {
                let g = batch
                    .guide
                    .as_ref()
                    .ok_or_else(|| NnError::InvalidArgument("guided training needs guide images".into()))?;
                let gm = cfg.ablation.use_semantics.then_some(&g.mask);
                if cfg.style_source() == GuideHr {
                    Some(self.model.encode(&g.hr, gm, EncoderPath::Hr)?)
                } else {
                    Some(self.model.encode(&g.lr, gm, EncoderPath::Lr)?)
                }
            }
        })
    }

    fn noisy(&self, style: Tensor) -> Result<Tensor> {
        let delta = self.model.config.noise_delta as f64;
        if delta == 0.0 {
            return Ok(style);
        }
        let mut r = rng::derived(self.model.config.seed, self.step, rng::NOISE);
        let n = style.elem_count();
        let u: Vec<f32> = (0..n).map(|_| r.random_range(-delta..=delta) as f32).collect();
        let u = Tensor::from_vec(u, style.dims(), &Device::Cpu)?.to_dtype(style.dtype())?;
        Ok((style + u)?.clamp(-1.0, 1.0)?)
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let started = Instant::now();
        let use_mask = self.model.config.ablation.use_semantics;
        let mask = use_mask.then_some(&batch.mask);

        let style = self.encode_batch(batch)?.map(|s| self.noisy(s)).transpose()?;
        let fake = self.model.generate(&batch.x_lr, mask, style.as_ref())?;

        // Discriminator update on the detached fake.
        let d = &self.model.discriminator;
        let real_out = d.forward(&batch.x_hr, mask)?;
        let fake_out = d.forward(&fake.detach(), mask)?;
        let real_logits: Vec<Tensor> = real_out.iter().map(|o| o.logits.clone()).collect();
        let fake_logits: Vec<Tensor> = fake_out.iter().map(|o| o.logits.clone()).collect();
        let loss_d = adv_loss_d(&real_logits, &fake_logits)?;
        let d_accuracy = patch_accuracy(&real_logits, &fake_logits)?;
        let loss_d_val = scalar(&loss_d)?;
        self.check_finite("loss_d", loss_d_val, batch)?;
        self.opt_d.step(&loss_d.backward()?)?;

        // Generator + encoder update against the updated discriminator.
        let real_out = d.forward(&batch.x_hr, mask)?;
        let fake_out = d.forward(&fake, mask)?;
        let g_adv = adv_loss_g(&fake_out.iter().map(|o| o.logits.clone()).collect::<Vec<_>>())?;
        let g_feat = feat_match_outputs(&real_out, &fake_out)?;
        let g_vgg = perceptual_loss(&fake, &batch.x_hr, self.extractor.as_ref())?;
        let loss_g = total_loss(&g_adv, &g_feat, &g_vgg, self.weights)?;
        let loss_g_val = scalar(&loss_g)?;
        self.check_finite("loss_g", loss_g_val, batch)?;
        self.opt_g.step(&loss_g.backward()?)?;

        self.step += 1;
        let log = StepLog {
            step: self.step,
            epoch: self.epoch,
            loss_d: loss_d_val,
            loss_g: loss_g_val,
            g_adv: scalar(&g_adv)?,
            g_feat: scalar(&g_feat)?,
            g_vgg: scalar(&g_vgg)?,
            d_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        self.stats.push(&log);
        Ok(log)
    }

    fn check_finite(&self, what: &str, v: f64, batch: &Batch) -> Result<()> {
        if v.is_finite() {
            return Ok(());
        }
        Err(NnError::InvalidArgument(format!(
            "{what} is {v} at step {} (epoch {}, batch ids {:?}, mean G loss {:.4}, mean D accuracy {:.3})",
            self.step + 1,
            self.epoch,
            batch.ids,
            self.stats.mean_g(),
            self.stats.mean_d_accuracy()
        )))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors: BTreeMap<String, Tensor> = self.model.to_checkpoint(serde_json::Value::Null)?.tensors;
        for (prefix, opt) in [("optim.g", &self.opt_g), ("optim.d", &self.opt_d)] {
            for (k, v) in opt.state_tensors() {
                tensors.insert(format!("{prefix}.{k}"), v);
            }
        }
        let state = SavedState {
            step: self.step,
            epoch: self.epoch,
            opt_g_steps: self.opt_g.steps(),
            opt_d_steps: self.opt_d.steps(),
            stats: self.stats.clone(),
        };
        Ok(Checkpoint {
            kind: CheckpointKind::Model,
            config: self.model.config.clone(),
            tensors,
            state: serde_json::to_value(state).map_err(|e| NnError::Checkpoint(e.to_string()))?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Restores weights, optimizer moments, counters and statistics. Plain
    /// weight-only checkpoints start fresh optimizers at step 0.
    pub fn resume(ckpt: &Checkpoint, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        let model = DeepSee::from_checkpoint(ckpt)?;
        let mut t = Self::with_model(model, extractor)?;
        if ckpt.state.is_null() || ckpt.section("optim.g").is_empty() {
            return Ok(t);
        }
        let s: SavedState =
            serde_json::from_value(ckpt.state.clone()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        t.opt_g.load_state(&ckpt.section("optim.g"), s.opt_g_steps)?;
        t.opt_d.load_state(&ckpt.section("optim.d"), s.opt_d_steps)?;
        t.step = s.step;
        t.epoch = s.epoch;
        t.stats = s.stats;
        Ok(t)
    }
}
