//! Checkpoints available to the service, loaded on first use.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use deepsee_nn::checkpoint::{Checkpoint, CheckpointKind};
use deepsee_nn::{DeepSee, Segmenter};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const CHECKPOINTS_ENV: &str = "DEEPSEE_CHECKPOINTS";

/// `$DEEPSEE_CHECKPOINTS`, else `./checkpoints`.
pub fn default_dir() -> PathBuf {
    std::env::var_os(CHECKPOINTS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("checkpoints"))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointInfo {
    /// File stem, unique within the directory.
    pub id: String,
    pub kind: String,
    pub scale: u32,
    pub n_regions: usize,
    pub style_dim: usize,
    pub variant: String,
    pub use_semantics: bool,
    pub uses_style: bool,
    pub needs_guide: bool,
}

#[derive(Clone)]
enum Loaded {
    Model(Arc<DeepSee>),
    Segmenter(Arc<Segmenter>),
}

pub struct Registry {
    dir: PathBuf,
    infos: Vec<CheckpointInfo>,
    cache: Mutex<HashMap<String, Loaded>>,
}

fn kind_name(kind: CheckpointKind) -> &'static str {
    match kind {
        CheckpointKind::Model => "model",
        CheckpointKind::Segmentation => "segmentation",
    }
}

impl Registry {
    /// Scans `dir` for `*.safetensors` checkpoints; unreadable files are
    /// skipped with a warning.
    pub fn scan(dir: &Path) -> Result<Self> {
        let mut infos = Vec::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| AppError::not_found(format!("checkpoint directory {}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "safetensors"))
            .collect();
        paths.sort();
        for path in paths {
            match Checkpoint::load(&path) {
                Ok(ck) => {
                    let c = &ck.config;
                    infos.push(CheckpointInfo {
                        id: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                        kind: kind_name(ck.kind).to_string(),
                        scale: c.scale,
                        n_regions: c.n_regions,
                        style_dim: c.style_dim,
                        variant: format!("{:?}", c.variant).to_lowercase(),
                        use_semantics: c.ablation.use_semantics,
                        uses_style: c.ablation.uses_style(),
                        needs_guide: c.needs_guide(),
                    });
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            infos,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn list(&self) -> &[CheckpointInfo] {
        &self.infos
    }

    pub fn info(&self, id: &str) -> Result<&CheckpointInfo> {
        self.infos
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| AppError::not_found(format!("unknown checkpoint `{id}`")))
    }

    /// The first model checkpoint, for requests that name none.
    pub fn default_model(&self) -> Result<&CheckpointInfo> {
        self.infos
            .iter()
            .find(|i| i.kind == "model")
            .ok_or_else(|| AppError::not_found(format!("no model checkpoint in {}", self.dir.display())))
    }

    /// The first segmentation checkpoint compatible with `model`.
    pub fn segmenter_for(&self, model: &CheckpointInfo) -> Option<&CheckpointInfo> {
        self.infos
            .iter()
            .find(|i| i.kind == "segmentation" && i.scale == model.scale && i.n_regions == model.n_regions)
    }

    fn load(&self, id: &str) -> Result<Loaded> {
        if let Some(l) = self.cache.lock().expect("registry lock").get(id) {
            return Ok(l.clone());
        }
        self.info(id)?;
        let ck = Checkpoint::load(self.dir.join(format!("{id}.safetensors")))?;
        let loaded = match ck.kind {
            CheckpointKind::Model => Loaded::Model(Arc::new(DeepSee::from_checkpoint(&ck)?)),
            CheckpointKind::Segmentation => Loaded::Segmenter(Arc::new(Segmenter::from_checkpoint(&ck)?)),
        };
        self.cache.lock().expect("registry lock").insert(id.to_string(), loaded.clone());
        Ok(loaded)
    }

    pub fn model(&self, id: &str) -> Result<Arc<DeepSee>> {
        match self.load(id)? {
            Loaded::Model(m) => Ok(m),
            Loaded::Segmenter(_) => Err(AppError::invalid(format!("`{id}` is a segmentation checkpoint"))),
        }
    }

    pub fn segmenter(&self, id: &str) -> Result<Arc<Segmenter>> {
        match self.load(id)? {
            Loaded::Segmenter(s) => Ok(s),
            Loaded::Model(_) => Err(AppError::invalid(format!("`{id}` is not a segmentation checkpoint"))),
        }
    }
}
