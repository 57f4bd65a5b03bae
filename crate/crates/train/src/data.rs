//! Seed-deterministic batching over a manifest split.

use std::collections::HashMap;

use candle_core::{DType, Tensor};
use deepsee_core::dataset::{make_pair, pair_from_hr, sample_guide, PairOptions};
use deepsee_core::{DatasetRecord, GuidePool, Manifest, SemanticMask, Split, TrainingPair};
use deepsee_nn::convert::{images_to_tensor, masks_to_tensor};
use deepsee_nn::{NnError, Result};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng;

#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub x_lr: Tensor,
    pub x_hr: Tensor,
    pub mask: Tensor,
    /// Guide images, present when the model needs a guide.
    pub guide: Option<GuideBatch>,
}

#[derive(Debug, Clone)]
pub struct GuideBatch {
    pub hr: Tensor,
    /// Bicubic LR of the guide.
    pub lr: Tensor,
    pub mask: Tensor,
}

enum Storage {
    Cached(Vec<TrainingPair>),
    Lazy(PairOptions),
}

/// Training examples for one split. Every record must have a label map.
pub struct TrainSet {
    records: Vec<DatasetRecord>,
    by_id: HashMap<String, usize>,
    pool: GuidePool,
    storage: Storage,
}

impl TrainSet {
    pub fn from_manifest(manifest: &Manifest, split: Split, opts: PairOptions, cache: bool) -> Result<Self> {
        let records = manifest.split(split);
        if records.is_empty() {
            return Err(NnError::InvalidArgument(format!("manifest has no {split:?} records")));
        }
        if let Some(r) = records.iter().find(|r| r.label_map.is_none()) {
            return Err(NnError::InvalidArgument(format!("record `{}` has no label map", r.id)));
        }
        let storage = if cache {
            Storage::Cached(records.iter().map(|r| Ok(make_pair(r, &opts)?)).collect::<Result<_>>()?)
        } else {
            Storage::Lazy(opts)
        };
        Ok(Self::assemble(records, storage))
    }

    /// In-memory examples; records carry ids and identities.
    pub fn from_pairs(records: Vec<DatasetRecord>, pairs: Vec<TrainingPair>) -> Result<Self> {
        if records.len() != pairs.len() || records.is_empty() {
            return Err(NnError::InvalidArgument("records and pairs must be non-empty and parallel".into()));
        }
        if pairs.iter().any(|p| p.mask.is_none()) {
            return Err(NnError::InvalidArgument("training pairs need masks".into()));
        }
        Ok(Self::assemble(records, Storage::Cached(pairs)))
    }

    fn assemble(records: Vec<DatasetRecord>, storage: Storage) -> Self {
        let by_id = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let pool = GuidePool::new(&records);
        Self {
            records,
            by_id,
            pool,
            storage,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn pair(&self, i: usize) -> Result<TrainingPair> {
        match &self.storage {
            Storage::Cached(p) => Ok(p[i].clone()),
            Storage::Lazy(opts) => Ok(make_pair(&self.records[i], opts)?),
        }
    }

    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        (self.len() / batch_size).max(1)
    }

    /// Dataset indices for a global step: a per-epoch seeded permutation, in
    /// consecutive chunks; the last partial chunk of an epoch is dropped.
    pub fn indices(&self, step: u64, batch_size: usize, seed: u64) -> Result<Vec<usize>> {
        if batch_size == 0 || batch_size > self.len() {
            return Err(NnError::InvalidArgument(format!(
                "batch size {batch_size} with {} examples",
                self.len()
            )));
        }
        let spe = self.steps_per_epoch(batch_size) as u64;
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut rng::derived(seed, epoch, rng::SHUFFLE));
        Ok(perm[pos * batch_size..(pos + 1) * batch_size].to_vec())
    }

    pub fn batch(&self, step: u64, batch_size: usize, seed: u64, hflip: bool, with_guide: bool, dtype: DType) -> Result<Batch> {
        let idx = self.indices(step, batch_size, seed)?;
        let mut flip_rng = rng::derived(seed, step, rng::FLIP);
        let mut guide_rng = rng::derived(seed, step, rng::GUIDE);
        let mut pairs = Vec::with_capacity(idx.len());
        let mut guides: Vec<TrainingPair> = Vec::new();
        for &i in &idx {
            let mut p = self.pair(i)?;
            if hflip && flip_rng.random_bool(0.5) {
                p = p.hflip();
            }
            if with_guide {
                guides.push(self.guide_for(i, &mut guide_rng)?);
            }
            pairs.push(p);
        }
        let lr: Vec<_> = pairs.iter().map(|p| &p.lr).collect();
        let hr: Vec<_> = pairs.iter().map(|p| &p.hr).collect();
        let masks: Vec<_> = pairs.iter().map(|p| p.mask.as_ref().expect("checked")).collect();
        let guide = if with_guide {
            let hr: Vec<_> = guides.iter().map(|g| &g.hr).collect();
            let lr: Vec<_> = guides.iter().map(|g| &g.lr).collect();
            let gm: Vec<_> = guides.iter().map(|g| g.mask.as_ref().expect("checked")).collect();
            Some(GuideBatch {
                hr: images_to_tensor(&hr, dtype)?,
                lr: images_to_tensor(&lr, dtype)?,
                mask: masks_to_tensor(&gm, dtype)?,
            })
        } else {
            None
        };
        Ok(Batch {
            ids: idx.iter().map(|&i| self.records[i].id.clone()).collect(),
            x_lr: images_to_tensor(&lr, dtype)?,
            x_hr: images_to_tensor(&hr, dtype)?,
            mask: masks_to_tensor(&masks, dtype)?,
            guide,
        })
    }

    /// Guide example for record `i`; records without identity guide themselves.
    fn guide_for<R: Rng>(&self, i: usize, rng: &mut R) -> Result<TrainingPair> {
        let rec = &self.records[i];
        if rec.identity.is_none() {
            return self.pair(i);
        }
        let choice = sample_guide(rec, &self.pool, rng)?;
        let j = self.by_id[&choice.record.id];
        self.pair(j)
    }
}

/// Convenience for tests and tools: pair from an in-memory HR image and mask.
pub fn pair(hr: deepsee_core::ImageTensor, mask: SemanticMask, scale: u32) -> Result<TrainingPair> {
    Ok(pair_from_hr(hr, Some(mask), scale)?)
}
