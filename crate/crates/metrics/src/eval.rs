//! Corpus evaluation of a trained model against the bicubic baseline.

use std::io::Write;
use std::path::Path;

use candle_core::DType;
use deepsee_core::dataset::{make_pair, sample_guide, PairOptions};
use deepsee_core::resample::bicubic_resample;
use deepsee_core::{DatasetRecord, GuidePool, ImageTensor, SemanticMask, StyleMatrix};
use deepsee_nn::{DeepSee, Embedder, FeatureExtractor, Lpips, Segmenter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};
use crate::fid::{fid, rows_to_matrix};
use crate::fidelity::{psnr, ssim};
use crate::perceptual::{batch, lpips, mean_pairwise_lpips};

pub const REPORT_VERSION: u32 = 1;
pub const MODEL: &str = "model";
pub const BICUBIC: &str = "bicubic";

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Resize HR images to this side length.
    pub hr_size: Option<u32>,
    pub max_images: Option<usize>,
    /// Styles sampled per input for the diversity score.
    pub k_styles: usize,
    /// Inputs used for the diversity score.
    pub diversity_images: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            hr_size: None,
            max_images: None,
            k_styles: 4,
            diversity_images: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_images: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    /// Absent with fewer than two images.
    pub fid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub k_styles: usize,
    pub n_inputs: usize,
    pub mean_pairwise_lpips: f64,
    /// Not part of the standard fidelity protocol.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub scale: u32,
    pub lpips_backbone: String,
    pub embedder: String,
    /// Where masks came from: `ground-truth`, `predicted`, or `none`.
    pub mask_source: String,
    pub summary: Vec<MethodSummary>,
    pub diversity: Option<Diversity>,
    pub images: Vec<ImageRow>,
}

impl Report {
    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| MetricsError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// One row per image and method, then one `mean` row per method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "method", "psnr", "ssim", "lpips", "fid"])?;
        for r in &self.images {
            w.write_record([&r.id, &r.method, &fmt(r.psnr), &fmt(r.ssim), &fmt(r.lpips), ""])?;
        }
        for s in &self.summary {
            let fid = s.fid.map(fmt).unwrap_or_default();
            w.write_record(["mean", &s.method, &fmt(s.psnr), &fmt(s.ssim), &fmt(s.lpips), &fid])?;
        }
        w.flush().map_err(|e| MetricsError::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| MetricsError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        self.write_json(&dir.join("report.json"))?;
        let path = dir.join("report.csv");
        let f = std::fs::File::create(&path).map_err(|e| MetricsError::Io { path, source: e })?;
        self.write_csv(f)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Masks for evaluation inputs.
pub enum MaskSource<'a> {
    GroundTruth,
    Predicted(&'a Segmenter),
}

struct Scored {
    rows: Vec<ImageRow>,
    embeddings: Vec<Vec<f64>>,
}

impl Scored {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            embeddings: Vec::new(),
        }
    }

    fn push(&mut self, id: &str, method: &str, out: &ImageTensor, hr: &ImageTensor, net: &Lpips, emb: &dyn Embedder) -> Result<()> {
        self.rows.push(ImageRow {
            id: id.to_string(),
            method: method.to_string(),
            psnr: psnr(out, hr)?,
            ssim: ssim(out, hr)?,
            lpips: lpips(out, hr, net)?,
        });
        self.embeddings.push(embed(out, emb)?);
        Ok(())
    }

    fn summary(&self, method: &str, reference: &[Vec<f64>]) -> Result<MethodSummary> {
        let n = self.rows.len();
        let mean = |f: fn(&ImageRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n.max(1) as f64;
        let fid = if n >= 2 {
            Some(fid(&rows_to_matrix(&self.embeddings)?, &rows_to_matrix(reference)?)?)
        } else {
            None
        };
        Ok(MethodSummary {
            method: method.to_string(),
            n_images: n,
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            lpips: mean(|r| r.lpips),
            fid,
        })
    }
}

fn embed(img: &ImageTensor, emb: &dyn Embedder) -> Result<Vec<f64>> {
    let t = emb.embed(&batch(&[img], DType::F32)?)?;
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

/// Bicubic upsampling of the LR input back to HR size.
pub fn bicubic_baseline(x_lr: &ImageTensor, scale: u32) -> Result<ImageTensor> {
    let s = scale as usize;
    Ok(bicubic_resample(x_lr, x_lr.height() * s, x_lr.width() * s)?)
}

/// Renders of `x_lr` under `k` independently sampled styles.
pub fn sampled_renders(
    model: &DeepSee,
    x_lr: &ImageTensor,
    mask: Option<&SemanticMask>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ImageTensor>> {
    let cfg = &model.config;
    if !cfg.ablation.uses_style() {
        return Ok(vec![model.super_resolve(x_lr, mask, None)?]);
    }
    (0..k)
        .map(|_| {
            let s = StyleMatrix::sample(cfg.n_regions, cfg.style_dim, rng);
            Ok(model.super_resolve(x_lr, mask, Some(&s))?)
        })
        .collect()
}

/// Mean pairwise LPIPS between renders of each input under sampled styles,
/// averaged over inputs.
pub fn diversity(
    model: &DeepSee,
    inputs: &[(ImageTensor, Option<SemanticMask>)],
    k: usize,
    seed: u64,
    net: &Lpips,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for (x, m) in inputs {
        total += mean_pairwise_lpips(&sampled_renders(model, x, m.as_ref(), k, &mut rng)?, net)?;
    }
    Ok(total / inputs.len().max(1) as f64)
}

/// Scores the model and the bicubic baseline on `records`.
///
/// Guided models take their guide from another image of the same identity
/// (sampled with `opts.seed`); the guide's mask is always its ground truth.
pub fn evaluate_run(
    model: &DeepSee,
    records: &[DatasetRecord],
    masks: MaskSource<'_>,
    net: &Lpips,
    embedder: &dyn Embedder,
    opts: &EvalOptions,
) -> Result<Report> {
    let cfg = &model.config;
    let records: Vec<DatasetRecord> = records.iter().take(opts.max_images.unwrap_or(usize::MAX)).cloned().collect();
    if records.is_empty() {
        return Err(MetricsError::InvalidArgument("no records to evaluate".into()));
    }
    let use_mask = cfg.ablation.use_semantics;
    let pair_opts = PairOptions {
        require_mask: use_mask && matches!(masks, MaskSource::GroundTruth),
        n_regions: cfg.n_regions,
        ..PairOptions::inference(cfg.scale, opts.hr_size)
    };
    let guide_opts = PairOptions {
        require_mask: true,
        ..pair_opts.clone()
    };
    let pool = GuidePool::new(&records);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut reference = Vec::new();
    let mut ours = Scored::new();
    let mut bicubic = Scored::new();
    let mut diversity_inputs = Vec::new();
    for rec in &records {
        let pair = make_pair(rec, &pair_opts)?;
        let mask = match (&masks, use_mask) {
            (_, false) => None,
            (MaskSource::GroundTruth, true) => pair.mask.clone(),
            (MaskSource::Predicted(seg), true) => Some(seg.predict(&pair.lr)?),
        };
        let guide = if cfg.needs_guide() {
            let choice = sample_guide(rec, &pool, &mut rng)?;
            let g = make_pair(&choice.record, &guide_opts)?;
            Some((g.hr, g.mask.expect("guide masks are required")))
        } else {
            None
        };
        let style = model.default_style(&pair.lr, mask.as_ref(), guide.as_ref().map(|(g, m)| (g, m)))?;
        let out = model.super_resolve(&pair.lr, mask.as_ref(), style.as_ref())?;
        let base = bicubic_baseline(&pair.lr, cfg.scale)?;

        reference.push(embed(&pair.hr, embedder)?);
        ours.push(&rec.id, MODEL, &out, &pair.hr, net, embedder)?;
        bicubic.push(&rec.id, BICUBIC, &base, &pair.hr, net, embedder)?;
        if diversity_inputs.len() < opts.diversity_images {
            diversity_inputs.push((pair.lr.clone(), mask));
        }
    }

    let diversity = if opts.k_styles >= 2 {
        Some(Diversity {
            k_styles: opts.k_styles,
            n_inputs: diversity_inputs.len(),
            mean_pairwise_lpips: diversity(model, &diversity_inputs, opts.k_styles, opts.seed ^ 0xd1, net)?,
            note: "supplementary measure of one-to-many variability; not a fidelity metric".into(),
        })
    } else {
        None
    };
    let summary = vec![ours.summary(MODEL, &reference)?, bicubic.summary(BICUBIC, &reference)?];
    let mut images = ours.rows;
    images.extend(bicubic.rows);
    Ok(Report {
        version: REPORT_VERSION,
        scale: cfg.scale,
        lpips_backbone: net.net.name().to_string(),
        embedder: embedder.name().to_string(),
        mask_source: match (use_mask, &masks) {
            (false, _) => "none",
            (true, MaskSource::GroundTruth) => "ground-truth",
            (true, MaskSource::Predicted(_)) => "predicted",
        }
        .to_string(),
        summary,
        diversity,
        images,
    })
}

/// Metrics for the bicubic baseline alone.
pub fn evaluate_bicubic(records: &[DatasetRecord], scale: u32, hr_size: Option<u32>, net: &Lpips) -> Result<Vec<ImageRow>> {
    let opts = PairOptions::inference(scale, hr_size);
    records
        .iter()
        .map(|rec| {
            let pair = make_pair(rec, &opts)?;
            let base = bicubic_baseline(&pair.lr, scale)?;
            Ok(ImageRow {
                id: rec.id.clone(),
                method: BICUBIC.to_string(),
                psnr: psnr(&base, &pair.hr)?,
                ssim: ssim(&base, &pair.hr)?,
                lpips: lpips(&base, &pair.hr, net)?,
            })
        })
        .collect()
}
