//! Cross-entropy training of the LR → HR segmentation network.

use std::path::Path;

use candle_core::{DType, Tensor};
use deepsee_core::ModelConfig;
use deepsee_nn::checkpoint::Checkpoint;
use deepsee_nn::convert::images_to_tensor;
use deepsee_nn::losses::cross_entropy;
use deepsee_nn::ops::scalar;
use deepsee_nn::{NnError, Result, Segmenter};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, TrainSet};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegStepLog {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegState {
    step: u64,
    opt_steps: u64,
}

pub struct SegTrainer {
    pub seg: Segmenter,
    opt: Adam,
    pub step: u64,
}

fn adam(seg: &Segmenter) -> Result<Adam> {
    Adam::new(
        seg.store.group(&[""]),
        AdamConfig {
            lr: seg.config.segmentation.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
    )
}

impl SegTrainer {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let seg = Segmenter::new(config, DType::F32)?;
        let opt = adam(&seg)?;
        Ok(Self { seg, opt, step: 0 })
    }

    pub fn loss(&self, batch: &Batch) -> Result<Tensor> {
        cross_entropy(&self.seg.net.logits(&batch.x_lr)?, &batch.mask)
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<SegStepLog> {
        let loss = self.loss(batch)?;
        let v = scalar(&loss)?;
        if !v.is_finite() {
            return Err(NnError::InvalidArgument(format!(
                "segmentation loss is {v} at step {} (batch ids {:?})",
                self.step + 1,
                batch.ids
            )));
        }
        self.opt.step(&loss.backward()?)?;
        self.step += 1;
        Ok(SegStepLog { step: self.step, loss: v })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.seg.to_checkpoint(serde_json::Value::Null)?;
        for (k, v) in self.opt.state_tensors() {
            ck.tensors.insert(format!("optim.{k}"), v);
        }
        ck.state = serde_json::to_value(SegState {
            step: self.step,
            opt_steps: self.opt.steps(),
        })
        .map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let seg = Segmenter::from_checkpoint(ckpt)?;
        let mut opt = adam(&seg)?;
        let mut step = 0;
        if !ckpt.state.is_null() {
            let s: SegState =
                serde_json::from_value(ckpt.state.clone()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
            opt.load_state(&ckpt.section("optim"), s.opt_steps)?;
            step = s.step;
        }
        Ok(Self { seg, opt, step })
    }
}

/// Mean per-pixel accuracy of predicted masks over a set, with the accuracy
/// of always predicting the most frequent training label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegAccuracy {
    pub accuracy: f64,
    pub majority_baseline: f64,
}

pub fn evaluate_segmentation(seg: &Segmenter, eval: &TrainSet, train_histogram: &[u64]) -> Result<SegAccuracy> {
    let majority = train_histogram
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (mut correct, mut base, mut total) = (0u64, 0u64, 0u64);
    for i in 0..eval.len() {
        let p = eval.pair(i)?;
        let truth = p.mask.as_ref().expect("eval pairs carry masks").labels();
        let x = images_to_tensor(&[&p.lr], seg.store.dtype())?;
        let pred = seg.net.predict(&x)?.pop().expect("batch of one").labels();
        for (a, b) in pred.iter().zip(truth.iter()) {
            correct += (a == b) as u64;
            base += (*b as usize == majority) as u64;
            total += 1;
        }
    }
    let t = total.max(1) as f64;
    Ok(SegAccuracy {
        accuracy: correct as f64 / t,
        majority_baseline: base as f64 / t,
    })
}

/// Pixel counts per region over a set.
pub fn label_histogram(set: &TrainSet, n_regions: usize) -> Result<Vec<u64>> {
    let mut h = vec![0u64; n_regions];
    for i in 0..set.len() {
        let p = set.pair(i)?;
        for (r, c) in p.mask.as_ref().expect("pairs carry masks").region_counts().iter().enumerate() {
            h[r] += *c as u64;
        }
    }
    Ok(h)
}
