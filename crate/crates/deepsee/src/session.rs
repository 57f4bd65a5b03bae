//! Stateful exploration sessions: a low-resolution input, an editable mask
//! and style, and an append-only history of renders.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use deepsee_core::regions::{region_index, region_names};
use deepsee_core::resample::bicubic_resample;
use deepsee_core::style::StyleJson;
use deepsee_core::{ImageTensor, MaskEdit, PaintShape, SemanticMask, StyleMatrix};
use deepsee_nn::{DeepSee, EncoderPath, Segmenter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const DEFAULT_SNAPSHOT: &str = "default";
pub const GUIDE_SNAPSHOT: &str = "guide";
pub const CURRENT: &str = "current";

pub fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn unb64(text: &str, what: &str) -> Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| AppError::invalid(format!("{what}: invalid base64: {e}")))
}

/// A region given by index or by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionRef {
    Index(usize),
    Name(String),
}

impl RegionRef {
    pub fn resolve(&self, n_regions: usize) -> Result<usize> {
        match self {
            RegionRef::Index(i) if *i < n_regions => Ok(*i),
            RegionRef::Index(i) => Err(AppError::invalid(format!("region {i} out of range 0..{n_regions}"))),
            RegionRef::Name(n) => Ok(region_index(n, n_regions)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndoTarget {
    Mask,
    Style,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    Paint { region: RegionRef, shape: PaintShape },
    Grow { region: RegionRef, radius: usize },
    Shrink { region: RegionRef, radius: usize },
    Transfer { from: RegionRef, to: RegionRef },
    /// Replaces the mask with a label PNG at output resolution.
    SetMask { png: String },
    /// Re-runs the segmentation network on the input.
    PredictMask,
    /// Reverts the latest mask or style change (the most recent of either
    /// when no target is given).
    Undo {
        #[serde(default)]
        target: Option<UndoTarget>,
    },
    SetStyle { style: StyleJson },
    /// `current = (1 − t)·from + t·to` over named snapshots.
    Interpolate { from: String, to: String, t: f32 },
    /// Copies the rows of `regions` from a named snapshot into the current style.
    Mix { source: String, regions: Vec<RegionRef> },
    /// Replaces the style (or only some regions of it) with uniform samples.
    Sample {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        regions: Option<Vec<RegionRef>>,
    },
    /// Uniform noise of width `delta`, clamped to [-1, 1].
    Jitter {
        delta: f32,
        #[serde(default)]
        seed: Option<u64>,
    },
    Snapshot { name: String },
    Restore { name: String },
    Render,
}

#[derive(Debug, Clone)]
pub struct Render {
    pub index: usize,
    pub inputs_hash: String,
    pub png: Arc<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOrigin {
    Predicted,
    Uploaded,
    Edited,
}

#[derive(Debug, Clone)]
pub struct Guide {
    pub hr: ImageTensor,
    pub mask: Option<SemanticMask>,
}

pub struct SessionInit {
    pub x_lr: ImageTensor,
    /// At output resolution.
    pub mask: Option<SemanticMask>,
    pub guide: Option<(ImageTensor, Option<SemanticMask>)>,
    pub seed: u64,
}

/// Input limits for uploads.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_lr_side: usize,
    pub min_lr_side: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_lr_side: 256,
            min_lr_side: 4,
        }
    }
}

#[derive(Clone)]
pub struct ExploreSession {
    pub id: String,
    pub checkpoint: String,
    model: Arc<DeepSee>,
    segmenter: Option<Arc<Segmenter>>,
    pub x_lr: ImageTensor,
    pub mask: Option<SemanticMask>,
    pub mask_origin: Option<MaskOrigin>,
    mask_undo: Vec<SemanticMask>,
    pub style: Option<StyleMatrix>,
    style_undo: Vec<StyleMatrix>,
    undo_order: Vec<UndoTarget>,
    pub snapshots: BTreeMap<String, StyleMatrix>,
    pub guide: Option<Guide>,
    pub renders: Vec<Render>,
    seed: u64,
    n_commands: u64,
}

fn check_square(img: &ImageTensor, what: &str, lim: &Limits) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    if h != w {
        return Err(AppError::invalid(format!("{what} must be square, got {w}x{h}")));
    }
    if h > lim.max_lr_side || h < lim.min_lr_side {
        return Err(AppError::invalid(format!(
            "{what} side {h} outside {}..={}",
            lim.min_lr_side, lim.max_lr_side
        )));
    }
    Ok(())
}

fn check_mask(mask: &SemanticMask, h: usize, n: usize, what: &str) -> Result<()> {
    if mask.height() != h || mask.width() != h || mask.n_regions() != n {
        return Err(AppError::invalid(format!(
            "{what} must be {h}x{h} with {n} regions, got {}x{} with {}",
            mask.width(),
            mask.height(),
            mask.n_regions()
        )));
    }
    Ok(())
}

impl ExploreSession {
    pub fn create(
        id: String,
        checkpoint: String,
        model: Arc<DeepSee>,
        segmenter: Option<Arc<Segmenter>>,
        init: SessionInit,
        limits: &Limits,
    ) -> Result<Self> {
        let cfg = model.config.clone();
        let s = cfg.scale as usize;
        check_square(&init.x_lr, "input image", limits)?;
        let hr = init.x_lr.height() * s;
        let predict = |lr: &ImageTensor| -> Result<SemanticMask> {
            let seg = segmenter.as_ref().ok_or_else(|| {
                AppError::invalid("no segmentation checkpoint available; upload a mask")
            })?;
            let m = seg.predict(lr)?;
            let side = lr.height() * s;
            if m.height() != side || m.n_regions() != cfg.n_regions {
                return Err(AppError::failed(format!(
                    "segmentation checkpoint does not match the model ({}x{} mask with {} regions)",
                    m.width(),
                    m.height(),
                    m.n_regions()
                )));
            }
            Ok(m)
        };

        let (mask, mask_origin) = match init.mask {
            Some(m) => {
                check_mask(&m, hr, cfg.n_regions, "mask")?;
                (Some(m), Some(MaskOrigin::Uploaded))
            }
            None if cfg.ablation.use_semantics => (Some(predict(&init.x_lr)?), Some(MaskOrigin::Predicted)),
            None => (None, None),
        };

        let guide = match init.guide {
            Some((g, gm)) => {
                if g.height() != hr || g.width() != hr {
                    return Err(AppError::invalid(format!("guide image must be {hr}x{hr}, got {}x{}", g.width(), g.height())));
                }
                let gm = match gm {
                    Some(m) => {
                        check_mask(&m, hr, cfg.n_regions, "guide mask")?;
                        Some(m)
                    }
                    None if cfg.ablation.use_semantics => {
                        Some(predict(&bicubic_resample(&g, hr / s, hr / s)?)?)
                    }
                    None => None,
                };
                Some(Guide { hr: g, mask: gm })
            }
            None if cfg.needs_guide() => {
                return Err(AppError::invalid("guided checkpoint requires a guide image"));
            }
            None => None,
        };

        let mut snapshots = BTreeMap::new();
        let placeholder = SemanticMask::uniform(hr, hr, cfg.n_regions, 0)?;
        let guide_pair = guide
            .as_ref()
            .map(|g| (&g.hr, g.mask.as_ref().unwrap_or(&placeholder)));
        let default = model.default_style(&init.x_lr, mask.as_ref(), guide_pair)?;
        if let Some(d) = &default {
            snapshots.insert(DEFAULT_SNAPSHOT.to_string(), d.clone());
        }
        if let (Some(g), true) = (&guide, cfg.ablation.uses_style()) {
            let gs = if cfg.needs_guide() {
                default.clone().expect("guided models have a style")
            } else {
                // Independent models only have the LR path.
                let lr = bicubic_resample(&g.hr, hr / s, hr / s)?;
                model.encode_image(&lr, g.mask.as_ref(), EncoderPath::Lr)?
            };
            snapshots.insert(GUIDE_SNAPSHOT.to_string(), gs);
        }

        Ok(Self {
            id,
            checkpoint,
            model,
            segmenter,
            x_lr: init.x_lr,
            mask,
            mask_origin,
            mask_undo: Vec::new(),
            style: default,
            style_undo: Vec::new(),
            undo_order: Vec::new(),
            snapshots,
            guide,
            renders: Vec::new(),
            seed: init.seed,
            n_commands: 0,
        })
    }

    pub fn model(&self) -> &DeepSee {
        &self.model
    }

    fn n_regions(&self) -> usize {
        self.model.config.n_regions
    }

    fn mask_ref(&self) -> Result<&SemanticMask> {
        self.mask
            .as_ref()
            .ok_or_else(|| AppError::invalid("this session has no semantic mask"))
    }

    fn style_ref(&self) -> Result<&StyleMatrix> {
        self.style
            .as_ref()
            .ok_or_else(|| AppError::invalid("this checkpoint has no style input"))
    }

    fn set_mask(&mut self, m: SemanticMask, origin: MaskOrigin) {
        if let Some(old) = self.mask.replace(m) {
            self.mask_undo.push(old);
            self.undo_order.push(UndoTarget::Mask);
        }
        self.mask_origin = Some(origin);
    }

    fn set_style(&mut self, s: StyleMatrix) {
        if let Some(old) = self.style.replace(s) {
            self.style_undo.push(old);
            self.undo_order.push(UndoTarget::Style);
        }
    }

    fn snapshot(&self, name: &str) -> Result<&StyleMatrix> {
        if name == CURRENT {
            return self.style_ref();
        }
        self.style_ref()?;
        self.snapshots
            .get(name)
            .ok_or_else(|| AppError::not_found(format!("unknown style snapshot `{name}`")))
    }

    fn command_rng(&self, seed: Option<u64>) -> ChaCha8Rng {
        let s = seed.unwrap_or_else(|| self.seed ^ self.n_commands.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        ChaCha8Rng::seed_from_u64(s)
    }

    fn edit(&mut self, edit: MaskEdit) -> Result<()> {
        let m = self.mask_ref()?.edit(&edit)?;
        self.set_mask(m, MaskOrigin::Edited);
        Ok(())
    }

    /// Applies one command; `Render` returns the new history entry.
    pub fn apply(&mut self, cmd: &Command) -> Result<Option<Render>> {
        let n = self.n_regions();
        let out = match cmd {
            Command::Paint { region, shape } => {
                self.edit(MaskEdit::Paint { region: region.resolve(n)?, shape: shape.clone() })?;
                None
            }
            Command::Grow { region, radius } => {
                self.edit(MaskEdit::Grow { region: region.resolve(n)?, radius: *radius })?;
                None
            }
            Command::Shrink { region, radius } => {
                self.edit(MaskEdit::Shrink { region: region.resolve(n)?, radius: *radius })?;
                None
            }
            Command::Transfer { from, to } => {
                self.edit(MaskEdit::Transfer { from: from.resolve(n)?, to: to.resolve(n)? })?;
                None
            }
            Command::SetMask { png } => {
                let m = SemanticMask::decode_png(&unb64(png, "mask")?, n)?;
                let hr = self.x_lr.height() * self.model.config.scale as usize;
                check_mask(&m, hr, n, "mask")?;
                self.set_mask(m, MaskOrigin::Uploaded);
                None
            }
            Command::PredictMask => {
                let seg = self
                    .segmenter
                    .clone()
                    .ok_or_else(|| AppError::invalid("no segmentation checkpoint available"))?;
                let m = seg.predict(&self.x_lr)?;
                self.set_mask(m, MaskOrigin::Predicted);
                None
            }
            Command::Undo { target } => {
                self.undo(*target)?;
                None
            }
            Command::SetStyle { style } => {
                let s = StyleMatrix::from_json(style)?;
                let cur = self.style_ref()?;
                if s.n_regions() != cur.n_regions() || s.style_dim() != cur.style_dim() {
                    return Err(AppError::invalid(format!(
                        "style must be {}x{}, got {}x{}",
                        cur.n_regions(),
                        cur.style_dim(),
                        s.n_regions(),
                        s.style_dim()
                    )));
                }
                self.set_style(s);
                None
            }
            Command::Interpolate { from, to, t } => {
                let s = StyleMatrix::interpolate(self.snapshot(from)?, self.snapshot(to)?, *t)?;
                self.set_style(s);
                None
            }
            Command::Mix { source, regions } => {
                let idx = regions.iter().map(|r| r.resolve(n)).collect::<Result<Vec<_>>>()?;
                let s = StyleMatrix::mix(self.style_ref()?, self.snapshot(source)?, &idx)?;
                self.set_style(s);
                None
            }
            Command::Sample { seed, regions } => {
                let cur = self.style_ref()?.clone();
                let sampled = StyleMatrix::sample(cur.n_regions(), cur.style_dim(), &mut self.command_rng(*seed));
                let s = match regions {
                    Some(r) => {
                        let idx = r.iter().map(|r| r.resolve(n)).collect::<Result<Vec<_>>>()?;
                        StyleMatrix::mix(&cur, &sampled, &idx)?
                    }
                    None => sampled,
                };
                self.set_style(s);
                None
            }
            Command::Jitter { delta, seed } => {
                let s = self.style_ref()?.inject_noise(*delta, &mut self.command_rng(*seed))?;
                self.set_style(s);
                None
            }
            Command::Snapshot { name } => {
                if name == CURRENT || name.is_empty() {
                    return Err(AppError::invalid(format!("`{name}` is not a valid snapshot name")));
                }
                let s = self.style_ref()?.clone();
                self.snapshots.insert(name.clone(), s);
                None
            }
            Command::Restore { name } => {
                let s = self.snapshot(name)?.clone();
                self.set_style(s);
                None
            }
            Command::Render => Some(self.render()?),
        };
        self.n_commands += 1;
        Ok(out)
    }

    fn undo(&mut self, target: Option<UndoTarget>) -> Result<()> {
        let target = match target.or_else(|| self.undo_order.last().copied()) {
            Some(t) => t,
            None => return Err(AppError::invalid("nothing to undo")),
        };
        match target {
            UndoTarget::Mask => {
                let m = self.mask_undo.pop().ok_or_else(|| AppError::invalid("no mask edit to undo"))?;
                self.mask = Some(m);
                self.mask_origin = Some(MaskOrigin::Edited);
            }
            UndoTarget::Style => {
                let s = self.style_undo.pop().ok_or_else(|| AppError::invalid("no style change to undo"))?;
                self.style = Some(s);
            }
        }
        if let Some(pos) = self.undo_order.iter().rposition(|t| *t == target) {
            self.undo_order.remove(pos);
        }
        Ok(())
    }

    /// Hash of everything the generator sees for the next render.
    pub fn inputs_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.checkpoint.as_bytes());
        h.update([0]);
        for v in self.x_lr.data().iter() {
            h.update(v.to_le_bytes());
        }
        if self.model.config.ablation.use_semantics {
            if let Some(m) = &self.mask {
                h.update(b"mask");
                let labels: Vec<u8> = m.labels().iter().copied().collect();
                h.update(&labels);
            }
        }
        if let Some(s) = &self.style {
            h.update(b"style");
            for v in s.data().iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn render(&mut self) -> Result<Render> {
        let hash = self.inputs_hash();
        let png = match self.renders.iter().find(|r| r.inputs_hash == hash) {
            Some(r) => r.png.clone(),
            None => {
                let a = self.model.config.ablation;
                let mask = if a.use_semantics { Some(self.mask_ref()?) } else { None };
                let out = self.model.super_resolve(&self.x_lr, mask, self.style.as_ref())?;
                Arc::new(out.encode_png()?)
            }
        };
        let r = Render {
            index: self.renders.len(),
            inputs_hash: hash,
            png,
        };
        self.renders.push(r.clone());
        Ok(r)
    }

    pub fn view(&self) -> Result<SessionView> {
        let cfg = &self.model.config;
        let mask = match &self.mask {
            Some(m) => Some(MaskView {
                png: b64(&m.encode_png()?),
                fingerprint: format!("{:016x}", m.fingerprint()),
                origin: self.mask_origin.unwrap_or(MaskOrigin::Uploaded),
            }),
            None => None,
        };
        Ok(SessionView {
            id: self.id.clone(),
            checkpoint: self.checkpoint.clone(),
            variant: format!("{:?}", cfg.variant).to_lowercase(),
            scale: cfg.scale,
            lr_size: self.x_lr.height(),
            hr_size: self.x_lr.height() * cfg.scale as usize,
            n_regions: cfg.n_regions,
            style_dim: cfg.style_dim,
            region_names: region_names(cfg.n_regions),
            mask,
            style: self.style.as_ref().map(|s| s.to_json()),
            snapshots: self.snapshots.keys().cloned().collect(),
            has_guide: self.guide.is_some(),
            renders: self
                .renders
                .iter()
                .map(|r| RenderInfo {
                    index: r.index,
                    inputs_hash: r.inputs_hash.clone(),
                })
                .collect(),
            undo: UndoDepth {
                mask: self.mask_undo.len(),
                style: self.style_undo.len(),
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MaskView {
    /// Base64 label PNG (pixel value = region index).
    pub png: String,
    pub fingerprint: String,
    pub origin: MaskOrigin,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RenderInfo {
    pub index: usize,
    pub inputs_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UndoDepth {
    pub mask: usize,
    pub style: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub id: String,
    pub checkpoint: String,
    pub variant: String,
    pub scale: u32,
    pub lr_size: usize,
    pub hr_size: usize,
    pub n_regions: usize,
    pub style_dim: usize,
    pub region_names: Vec<String>,
    pub mask: Option<MaskView>,
    pub style: Option<StyleJson>,
    pub snapshots: Vec<String>,
    pub has_guide: bool,
    pub renders: Vec<RenderInfo>,
    pub undo: UndoDepth,
}

struct Entry {
    session: Arc<Mutex<ExploreSession>>,
    last_used: Instant,
}

/// In-process sessions with an idle timeout.
pub struct SessionStore {
    ttl: Duration,
    entries: Mutex<HashMap<String, Entry>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn insert(&self, session: ExploreSession) -> Arc<Mutex<ExploreSession>> {
        let id = session.id.clone();
        let s = Arc::new(Mutex::new(session));
        let mut e = self.entries.lock().expect("store lock");
        Self::purge(&mut e, self.ttl, Instant::now());
        e.insert(
            id,
            Entry {
                session: s.clone(),
                last_used: Instant::now(),
            },
        );
        s
    }

    /// Looks up a live session and refreshes its idle timer.
    pub fn get(&self, id: &str) -> Result<Arc<Mutex<ExploreSession>>> {
        self.get_at(id, Instant::now())
    }

    pub fn get_at(&self, id: &str, now: Instant) -> Result<Arc<Mutex<ExploreSession>>> {
        let mut e = self.entries.lock().expect("store lock");
        Self::purge(&mut e, self.ttl, now);
        let entry = e
            .get_mut(id)
            .ok_or_else(|| AppError::not_found(format!("unknown or expired session `{id}`")))?;
        entry.last_used = now;
        Ok(entry.session.clone())
    }

    fn purge(e: &mut HashMap<String, Entry>, ttl: Duration, now: Instant) {
        e.retain(|_, v| now.saturating_duration_since(v.last_used) < ttl);
    }

    pub fn remove(&self, id: &str) -> Result<()> {
        self.entries
            .lock()
            .expect("store lock")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| AppError::not_found(format!("unknown or expired session `{id}`")))
    }

    /// Drops sessions idle for longer than the TTL as of `now`.
    pub fn purge_expired(&self, now: Instant) -> usize {
        let mut e = self.entries.lock().expect("store lock");
        let before = e.len();
        Self::purge(&mut e, self.ttl, now);
        before - e.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
