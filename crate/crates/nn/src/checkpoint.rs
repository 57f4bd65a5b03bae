//! Single-file checkpoints: safetensors payload plus string metadata carrying
//! the format version, model configuration and free-form JSON state.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use deepsee_core::ModelConfig;

use crate::error::{NnError, Result};

pub const FORMAT: &str = "deepsee-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Model,
    Segmentation,
}

impl CheckpointKind {
    fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Model => "model",
            CheckpointKind::Segmentation => "segmentation",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(CheckpointKind::Model),
            "segmentation" => Ok(CheckpointKind::Segmentation),
            other => Err(NnError::Checkpoint(format!("unknown checkpoint kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
    pub state: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let config = self.config.to_toml()?;
        let metadata: HashMap<String, String> = [
            ("format".to_string(), FORMAT.to_string()),
            ("version".to_string(), FORMAT_VERSION.to_string()),
            ("kind".to_string(), self.kind.as_str().to_string()),
            ("config".to_string(), config),
            ("state".to_string(), self.state.to_string()),
        ]
        .into_iter()
        .collect();
        let contiguous: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), t.contiguous()?)))
            .collect::<Result<_>>()?;
        let tmp = path.with_extension("partial");
        safetensors::serialize_to_file(contiguous, Some(metadata), &tmp)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| NnError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| NnError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let bad = |m: String| NnError::Checkpoint(format!("{}: {m}", path.display()));
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing metadata `{k}`")));
        if field("format")? != FORMAT {
            return Err(bad("not a checkpoint file".into()));
        }
        let version: u32 = field("version")?.parse().map_err(|_| bad("bad version".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version} not supported (expected {FORMAT_VERSION})")));
        }
        let kind = CheckpointKind::parse(&field("kind")?)?;
        let config = ModelConfig::from_toml(&field("config")?)?;
        let state = serde_json::from_str(&field("state")?).map_err(|e| bad(e.to_string()))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?
            .into_iter()
            .collect();
        Ok(Self {
            kind,
            config,
            tensors,
            state,
        })
    }

    /// Tensors whose name starts with `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }
}
