//! Training loops with newline-delimited JSON logs and periodic checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use deepsee_nn::{NnError, Result};
use serde::Serialize;

use crate::data::TrainSet;
use crate::seg::{SegStepLog, SegTrainer};
use crate::trainer::{StepLog, Trainer};

pub struct NdjsonLog {
    out: Option<BufWriter<File>>,
}

impl NdjsonLog {
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| NnError::Io {
                path: p.to_path_buf(),
                source: e,
            })?)),
            None => None,
        };
        Ok(Self { out })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| NnError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        Ok(Self {
            out: Some(BufWriter::new(f)),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        if let Some(out) = &mut self.out {
            let line = serde_json::to_string(record).map_err(|e| NnError::Checkpoint(e.to_string()))?;
            writeln!(out, "{line}")
                .and_then(|_| out.flush())
                .map_err(|e| NnError::Io {
                    path: PathBuf::from("<log>"),
                    source: e,
                })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Overrides the epoch budget when set.
    pub max_steps: Option<u64>,
    pub log: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

pub const LATEST: &str = "latest.safetensors";
pub const FINAL: &str = "model.safetensors";

fn save_to<F: Fn(&Path) -> Result<()>>(dir: &Option<PathBuf>, name: &str, save: F) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| NnError::Io {
            path: d.clone(),
            source: e,
        })?;
        save(&d.join(name))?;
    }
    Ok(())
}

/// Runs the adversarial loop from `trainer.step` to the step budget.
/// `on_step` sees every step's log.
pub fn train(trainer: &mut Trainer, data: &TrainSet, opts: &RunOptions, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
    let cfg = trainer.config().clone();
    let bs = cfg.train.batch_size;
    let spe = data.steps_per_epoch(bs) as u64;
    let total = opts.max_steps.or(cfg.train.max_steps).unwrap_or(cfg.train.epochs as u64 * spe);
    let mut log = match &opts.log {
        Some(p) if trainer.step > 0 => NdjsonLog::append(p)?,
        p => NdjsonLog::create(p.as_deref())?,
    };
    let with_guide = cfg.needs_guide();
    let mut logs = Vec::new();
    while trainer.step < total {
        trainer.epoch = trainer.step / spe;
        let batch = data.batch(trainer.step, bs, cfg.seed, cfg.train.hflip, with_guide, DType::F32)?;
        let entry = trainer.train_step(&batch)?;
        if entry.step % opts.log_every.max(1) == 0 || entry.step == total {
            log.write(&entry)?;
        }
        on_step(&entry);
        if opts.checkpoint_every > 0 && entry.step % opts.checkpoint_every == 0 {
            save_to(&opts.out_dir, LATEST, |p| trainer.save(p))?;
        }
        logs.push(entry);
    }
    save_to(&opts.out_dir, LATEST, |p| trainer.save(p))?;
    save_to(&opts.out_dir, FINAL, |p| trainer.model.to_checkpoint(serde_json::json!({"step": trainer.step}))?.save(p))?;
    Ok(logs)
}

pub fn train_segmentation(
    trainer: &mut SegTrainer,
    data: &TrainSet,
    opts: &RunOptions,
    mut on_step: impl FnMut(&SegStepLog),
) -> Result<Vec<SegStepLog>> {
    let cfg = trainer.seg.config.clone();
    let bs = cfg.train.batch_size;
    let spe = data.steps_per_epoch(bs) as u64;
    let total = opts.max_steps.or(cfg.train.max_steps).unwrap_or(cfg.train.epochs as u64 * spe);
    let mut log = match &opts.log {
        Some(p) if trainer.step > 0 => NdjsonLog::append(p)?,
        p => NdjsonLog::create(p.as_deref())?,
    };
    let mut logs = Vec::new();
    while trainer.step < total {
        let batch = data.batch(trainer.step, bs, cfg.seed, cfg.train.hflip, false, DType::F32)?;
        let entry = trainer.train_step(&batch)?;
        if entry.step % opts.log_every.max(1) == 0 || entry.step == total {
            log.write(&entry)?;
        }
        on_step(&entry);
        if opts.checkpoint_every > 0 && entry.step % opts.checkpoint_every == 0 {
            save_to(&opts.out_dir, LATEST, |p| trainer.save(p))?;
        }
        logs.push(entry);
    }
    save_to(&opts.out_dir, LATEST, |p| trainer.save(p))?;
    save_to(&opts.out_dir, FINAL, |p| trainer.seg.to_checkpoint(serde_json::Value::Null)?.save(p))?;
    Ok(logs)
}
