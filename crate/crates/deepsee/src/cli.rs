//! Command-line entry points. Results go to stdout as JSON lines; failures
//! go to stderr as `{"error": {...}}` with a non-zero exit code.

use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use candle_core::DType;
use clap::{Args, Parser, Subcommand, ValueEnum};
use deepsee_core::dataset::{prepare_celeba, prepare_celebamask_hq, PairOptions};
use deepsee_core::synthetic::write_dataset;
use deepsee_core::{ImageTensor, Manifest, ModelConfig, SemanticMask, Split};
use deepsee_metrics::eval::{evaluate_run, EvalOptions, MaskSource};
use deepsee_nn::assets::{self, AssetSpec};
use deepsee_nn::checkpoint::{Checkpoint, CheckpointKind};
use deepsee_nn::{DeepSee, FeatureExtractor, Lpips, Segmenter, Vgg, VggEmbedder, VggKind};
use deepsee_train::seg::{evaluate_segmentation, label_histogram};
use deepsee_train::{train, train_segmentation, RunOptions, SegTrainer, TrainSet, Trainer};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};
use crate::registry::{self, Registry};
use crate::service::{self, AppState};
use crate::session::{Command, ExploreSession, Limits, SessionInit, GUIDE_SNAPSHOT};

#[derive(Debug, Parser)]
#[command(name = "deepsee", version, about = "Semantic explorative face super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write a dataset manifest (and label maps) from a dataset directory.
    PrepareData(PrepareArgs),
    /// Train the segmentation network that predicts masks from LR inputs.
    TrainSeg(TrainArgs),
    /// Train the super-resolution GAN.
    Train(TrainArgs),
    /// Upscale images.
    Infer(InferArgs),
    /// Score a checkpoint on a manifest split.
    Evaluate(EvalArgs),
    /// Run the HTTP exploration service.
    Serve(ServeArgs),
    /// Manage pretrained weight files.
    Assets {
        #[command(subcommand)]
        action: AssetsCmd,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Source {
    Synthetic,
    CelebamaskHq,
    Celeba,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub source: Source,
    /// Dataset checkout (not used for `synthetic`).
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic only.
    #[arg(long, default_value_t = 200)]
    pub n_images: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub per_identity: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Full,
    Desk,
    Tiny,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML model config; `--preset` and `--scale` are used otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    #[arg(long)]
    pub scale: Option<u32>,
    /// One of the six ablation presets.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Manifest (`manifest.jsonl`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Continue from a training checkpoint (its config wins).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub hr_size: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep decoded training pairs in memory.
    #[arg(long)]
    pub cache: bool,
    /// Perceptual-loss network: `pretrained` (VGG-19 asset) or
    /// `stand-in:<divisor>` (seeded random weights, offline).
    #[arg(long, default_value = "pretrained")]
    pub perceptual: String,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint file or id in the checkpoint directory; defaults to the
    /// first model there matching `--scale`.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Expected upscaling factor; checked against the checkpoint.
    #[arg(long)]
    pub scale: Option<u32>,
    /// `predict` or a label PNG at output resolution (single input only).
    #[arg(long, default_value = "predict")]
    pub mask: String,
    #[arg(long)]
    pub seg_checkpoint: Option<PathBuf>,
    /// `default`, `sample:<k>` or `guide:<path>`.
    #[arg(long, default_value = "default")]
    pub style: String,
    #[arg(long)]
    pub guide_mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write the mask used for each input.
    #[arg(long)]
    pub save_mask: bool,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Predict masks with this segmentation checkpoint instead of using
    /// ground-truth label maps.
    #[arg(long)]
    pub seg_checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    #[arg(long)]
    pub max_images: Option<usize>,
    #[arg(long)]
    pub hr_size: Option<u32>,
    #[arg(long, default_value_t = 4)]
    pub k_styles: usize,
    #[arg(long, default_value_t = 16)]
    pub diversity_images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// LPIPS / FID networks: `pretrained` or `stand-in:<divisor>`.
    #[arg(long, default_value = "pretrained")]
    pub metric_nets: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed either way.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Idle time after which sessions are dropped.
    #[arg(long, default_value_t = 1800)]
    pub ttl_secs: u64,
}

#[derive(Debug, Subcommand)]
pub enum AssetsCmd {
    List {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    Fetch {
        /// Asset names; all when empty.
        names: Vec<String>,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    Verify {
        names: Vec<String>,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value).expect("serializable"))?;
    out.flush()?;
    Ok(())
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn main_with(argv: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{e}");
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let msg = e.kind().as_str().map(str::to_string).unwrap_or_else(|| "invalid arguments".into());
            let detail = e.to_string();
            let ae = AppError::invalid(detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ").to_string())
                .with_hint("run `deepsee --help`");
            let _ = writeln!(err, "{}", ae.to_json());
            return 2;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Cmd::PrepareData(a) => prepare(a, out),
        Cmd::TrainSeg(a) => cmd_train_seg(a, out),
        Cmd::Train(a) => cmd_train(a, out),
        Cmd::Infer(a) => infer(a, out),
        Cmd::Evaluate(a) => evaluate(a, out),
        Cmd::Serve(a) => serve(a, out),
        Cmd::Assets { action } => assets_cmd(action, out),
    }
}

#[derive(Serialize)]
struct ManifestSummary {
    manifest: PathBuf,
    records: usize,
    train: usize,
    val: usize,
    test: usize,
    with_labels: usize,
}

fn prepare(a: PrepareArgs, out: &mut dyn Write) -> Result<()> {
    let root = || {
        a.root
            .clone()
            .ok_or_else(|| AppError::invalid("--root is required for this source"))
    };
    let manifest = match a.source {
        Source::Synthetic => write_dataset(&a.out, a.n_images, a.size, a.per_identity, a.seed)?,
        Source::CelebamaskHq => prepare_celebamask_hq(&root()?, &a.out)?,
        Source::Celeba => prepare_celeba(&root()?)?,
    };
    let path = a.out.join("manifest.jsonl");
    std::fs::create_dir_all(&a.out)?;
    manifest.save(&path)?;
    emit(
        out,
        &ManifestSummary {
            manifest: path,
            records: manifest.len(),
            train: manifest.split(Split::Train).len(),
            val: manifest.split(Split::Val).len(),
            test: manifest.split(Split::Test).len(),
            with_labels: manifest.records.iter().filter(|r| r.label_map.is_some()).count(),
        },
    )
}

/// `pretrained` or `stand-in:<divisor>`.
fn parse_net_choice(s: &str) -> Result<Option<usize>> {
    match s.split_once(':') {
        None if s == "pretrained" => Ok(None),
        Some(("stand-in", d)) => d
            .parse::<usize>()
            .ok()
            .filter(|d| *d > 0)
            .map(Some)
            .ok_or_else(|| AppError::invalid(format!("bad divisor in `{s}`"))),
        _ => Err(AppError::invalid(format!("expected `pretrained` or `stand-in:<divisor>`, got `{s}`"))),
    }
}

fn perceptual_net(choice: &str, seed: u64) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match parse_net_choice(choice)? {
        None => {
            let path = assets::resolve(&assets::VGG19, &assets::default_dir())?;
            Box::new(Vgg::from_torchvision(VggKind::Vgg19, &path, DType::F32)?)
        }
        Some(d) => Box::new(Vgg::stand_in(VggKind::Vgg19, d, seed, DType::F32)?),
    })
}

fn train_config(a: &TrainArgs) -> Result<ModelConfig> {
    let mut cfg = match &a.config {
        Some(p) => ModelConfig::load(p)?,
        None => {
            let scale = a.scale.unwrap_or(8);
            match a.preset {
                Preset::Full => ModelConfig {
                    scale,
                    ..ModelConfig::default()
                },
                Preset::Desk => ModelConfig::desk(scale),
                Preset::Tiny => ModelConfig::tiny(scale),
            }
        }
    };
    if let (Some(_), Some(s)) = (&a.config, a.scale) {
        cfg.scale = s;
    }
    if let Some(name) = &a.ablation {
        cfg = cfg.with_ablation(name)?;
    }
    if let Some(h) = a.hr_size {
        cfg.train.hr_size = Some(h);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(AppError::not_found(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn train_set(manifest: &Manifest, split: Split, cfg: &ModelConfig, cache: bool) -> Result<TrainSet> {
    let opts = PairOptions {
        n_regions: cfg.n_regions,
        ..PairOptions::training(cfg.scale, cfg.train.hr_size)
    };
    Ok(TrainSet::from_manifest(manifest, split, opts, cache)?)
}

fn run_options(a: &TrainArgs, cfg: &ModelConfig, log_name: &str) -> RunOptions {
    RunOptions {
        out_dir: Some(a.out.clone()),
        max_steps: a.max_steps,
        log: Some(a.out.join(log_name)),
        checkpoint_every: cfg.train.checkpoint_every,
        log_every: cfg.train.log_every,
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&a.dataset)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if a.config.is_some() || a.ablation.is_some() {
                log::warn!("--resume: using the checkpoint's config");
            }
            Trainer::resume(&ck, perceptual_net(&a.perceptual, ck.config.seed)?)?
        }
        None => {
            let cfg = train_config(&a)?;
            Trainer::new(&cfg, perceptual_net(&a.perceptual, cfg.seed)?)?
        }
    };
    let cfg = trainer.config().clone();
    std::fs::create_dir_all(&a.out)?;
    cfg.save(a.out.join("config.toml"))?;
    let data = train_set(&manifest, Split::Train, &cfg, a.cache)?;
    let opts = run_options(&a, &cfg, "train.jsonl");
    let every = cfg.train.log_every.max(1);
    let logs = train(&mut trainer, &data, &opts, |l| {
        if l.step % every == 0 {
            eprintln!(
                "step {} loss_g {:.4} loss_d {:.4} d_acc {:.3} ({:.2}s)",
                l.step, l.loss_g, l.loss_d, l.d_accuracy, l.seconds
            );
        }
    })?;
    emit(
        out,
        &serde_json::json!({
            "checkpoint": a.out.join(deepsee_train::run::FINAL),
            "latest": a.out.join(deepsee_train::run::LATEST),
            "steps": trainer.step,
            "steps_run": logs.len(),
            "last": logs.last(),
        }),
    )
}

fn cmd_train_seg(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&a.dataset)?;
    let mut trainer = match &a.resume {
        Some(p) => SegTrainer::resume(&load_checkpoint(p)?)?,
        None => SegTrainer::new(&train_config(&a)?)?,
    };
    let cfg = trainer.seg.config.clone();
    std::fs::create_dir_all(&a.out)?;
    let data = train_set(&manifest, Split::Train, &cfg, a.cache)?;
    let opts = run_options(&a, &cfg, "train_seg.jsonl");
    let every = cfg.train.log_every.max(1);
    let logs = train_segmentation(&mut trainer, &data, &opts, |l| {
        if l.step % every == 0 {
            eprintln!("step {} loss {:.4}", l.step, l.loss);
        }
    })?;
    let held_out = [Split::Test, Split::Val]
        .into_iter()
        .find_map(|s| train_set(&manifest, s, &cfg, false).ok());
    let accuracy = match held_out {
        Some(eval) => Some(evaluate_segmentation(
            &trainer.seg,
            &eval,
            &label_histogram(&data, cfg.n_regions)?,
        )?),
        None => None,
    };
    emit(
        out,
        &serde_json::json!({
            "checkpoint": a.out.join(deepsee_train::run::FINAL),
            "steps": trainer.step,
            "last_loss": logs.last().map(|l| l.loss),
            "held_out": accuracy,
        }),
    )
}

enum StyleChoice {
    Default,
    Sample(usize),
    Guide(PathBuf),
}

fn parse_style(s: &str) -> Result<StyleChoice> {
    match s.split_once(':') {
        None if s == "default" => Ok(StyleChoice::Default),
        Some(("sample", k)) => match k.parse::<usize>() {
            Ok(k) if k > 0 => Ok(StyleChoice::Sample(k)),
            _ => Err(AppError::invalid(format!("`{s}`: sample count must be a positive integer"))),
        },
        Some(("guide", p)) if !p.is_empty() => Ok(StyleChoice::Guide(PathBuf::from(p))),
        _ => Err(AppError::invalid(format!(
            "--style must be `default`, `sample:<k>` or `guide:<path>`, got `{s}`"
        ))),
    }
}

fn checkpoint_path(spec: &str, dir: &Path) -> PathBuf {
    let p = PathBuf::from(spec);
    if p.is_file() {
        p
    } else {
        dir.join(format!("{spec}.safetensors"))
    }
}

fn load_model(a: &InferArgs, dir: &Path) -> Result<(String, DeepSee, Option<Segmenter>)> {
    let (id, path) = match &a.checkpoint {
        Some(c) => (c.clone(), checkpoint_path(c, dir)),
        None => {
            let reg = Registry::scan(dir).map_err(|e| e.with_hint("pass --checkpoint"))?;
            let info = reg
                .list()
                .iter()
                .find(|i| i.kind == "model" && a.scale.is_none_or(|s| s == i.scale))
                .ok_or_else(|| AppError::not_found(format!("no matching model checkpoint in {}", dir.display())))?;
            (info.id.clone(), dir.join(format!("{}.safetensors", info.id)))
        }
    };
    let ck = load_checkpoint(&path)?;
    if ck.kind != CheckpointKind::Model {
        return Err(AppError::invalid(format!("{} is not a model checkpoint", path.display())));
    }
    let model = DeepSee::from_checkpoint(&ck)?;
    if let Some(s) = a.scale {
        if s != model.config.scale {
            return Err(AppError::invalid(format!(
                "checkpoint upscales by {}, --scale asked for {s}",
                model.config.scale
            )));
        }
    }
    let seg = match &a.seg_checkpoint {
        Some(p) => Some(Segmenter::from_checkpoint(&load_checkpoint(p)?)?),
        None => Registry::scan(dir).ok().and_then(|reg| {
            let c = &model.config;
            let seg = reg
                .list()
                .iter()
                .find(|i| i.kind == "segmentation" && i.scale == c.scale && i.n_regions == c.n_regions)?;
            reg.segmenter(&seg.id).ok().map(|s| s.as_ref().clone())
        }),
    };
    Ok((id, model, seg))
}

#[derive(Serialize)]
struct InferOutput {
    input: PathBuf,
    outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<PathBuf>,
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let style = parse_style(&a.style)?;
    let dir = a.checkpoints.clone().unwrap_or_else(registry::default_dir);
    let (id, model, seg) = load_model(&a, &dir)?;
    let n = model.config.n_regions;
    if a.mask != "predict" && a.inputs.len() > 1 {
        return Err(AppError::invalid("a mask file can only be used with a single input"));
    }
    let guide = match &style {
        StyleChoice::Guide(p) => Some((
            ImageTensor::load(p)?,
            a.guide_mask.as_ref().map(|m| SemanticMask::load_png(m, n)).transpose()?,
        )),
        _ => None,
    };
    let model = Arc::new(model);
    let seg = seg.map(Arc::new);
    let limits = Limits {
        max_lr_side: 1024,
        ..Limits::default()
    };
    std::fs::create_dir_all(&a.out)?;
    for input in &a.inputs {
        let x_lr = ImageTensor::load(input)?;
        let mask = match a.mask.as_str() {
            "predict" => None,
            file => Some(SemanticMask::load_png(file, n)?),
        };
        let mut session = ExploreSession::create(
            String::new(),
            id.clone(),
            model.clone(),
            seg.clone(),
            SessionInit {
                x_lr,
                mask,
                guide: guide.clone(),
                seed: a.seed,
            },
            &limits,
        )?;
        let commands: Vec<(String, Vec<Command>)> = match &style {
            StyleChoice::Default => vec![(String::new(), vec![Command::Render])],
            StyleChoice::Sample(k) => (0..*k as u64)
                .map(|i| {
                    (
                        format!("_s{i}"),
                        vec![
                            Command::Sample {
                                seed: Some(a.seed.wrapping_add(i)),
                                regions: None,
                            },
                            Command::Render,
                        ],
                    )
                })
                .collect(),
            StyleChoice::Guide(_) if session.snapshots.contains_key(GUIDE_SNAPSHOT) => vec![(
                String::new(),
                vec![
                    Command::Restore {
                        name: GUIDE_SNAPSHOT.into(),
                    },
                    Command::Render,
                ],
            )],
            StyleChoice::Guide(_) => {
                log::warn!("checkpoint has no style input; guide ignored");
                vec![(String::new(), vec![Command::Render])]
            }
        };
        let stem = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let mut outputs = Vec::new();
        for (suffix, cmds) in commands {
            let mut render = None;
            for c in &cmds {
                render = session.apply(c)?.or(render);
            }
            let r = render.expect("command list ends with a render");
            let path = a.out.join(format!("{stem}{suffix}.png"));
            std::fs::write(&path, r.png.as_slice())?;
            outputs.push(path);
        }
        let mask = match (&session.mask, a.save_mask) {
            (Some(m), true) => {
                let p = a.out.join(format!("{stem}_mask.png"));
                m.save_png(&p)?;
                Some(p)
            }
            _ => None,
        };
        emit(
            out,
            &InferOutput {
                input: input.clone(),
                outputs,
                mask,
            },
        )?;
    }
    Ok(())
}

fn metric_nets(choice: &str) -> Result<(Lpips, VggEmbedder)> {
    Ok(match parse_net_choice(choice)? {
        None => {
            let dir = assets::default_dir();
            let vgg = assets::resolve(&assets::VGG16, &dir)?;
            let lin = assets::resolve(&assets::LPIPS_VGG, &dir)?;
            (
                Lpips::from_files(&vgg, &lin, DType::F32)?,
                VggEmbedder(Vgg::from_torchvision(VggKind::Vgg16, &vgg, DType::F32)?),
            )
        }
        Some(d) => (
            Lpips::stand_in(d, 0, DType::F32)?,
            VggEmbedder(Vgg::stand_in(VggKind::Vgg16, d, 1, DType::F32)?),
        ),
    })
}

fn evaluate(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck_path = a
        .checkpoint
        .as_ref()
        .ok_or_else(|| AppError::invalid("no checkpoint given").with_hint("pass --checkpoint <file>"))?;
    let dataset = a
        .dataset
        .as_ref()
        .ok_or_else(|| AppError::invalid("no dataset given").with_hint("pass --dataset <manifest.jsonl>"))?;
    let model = DeepSee::from_checkpoint(&load_checkpoint(ck_path)?)?;
    let split: Split = a.split.parse()?;
    let records = Manifest::load(dataset)?.split(split);
    let seg = a
        .seg_checkpoint
        .as_ref()
        .map(|p| Ok::<_, AppError>(Segmenter::from_checkpoint(&load_checkpoint(p)?)?))
        .transpose()?;
    let (net, embedder) = metric_nets(&a.metric_nets)?;
    let masks = match &seg {
        Some(s) => MaskSource::Predicted(s),
        None => MaskSource::GroundTruth,
    };
    let opts = EvalOptions {
        hr_size: a.hr_size,
        max_images: a.max_images,
        k_styles: a.k_styles,
        diversity_images: a.diversity_images,
        seed: a.seed,
    };
    let report = evaluate_run(&model, &records, masks, &net, &embedder, &opts)?;
    report.save(&a.out)?;
    emit(
        out,
        &serde_json::json!({
            "report": a.out.join("report.json"),
            "csv": a.out.join("report.csv"),
            "summary": report.summary,
            "diversity": report.diversity,
        }),
    )
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let dir = a.checkpoints.clone().unwrap_or_else(registry::default_dir);
    let registry = Registry::scan(&dir)?;
    let state = Arc::new(AppState::new(registry, Duration::from_secs(a.ttl_secs.max(1))));
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| AppError::invalid(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::failed(format!("runtime: {e}")))?;
    rt.block_on(service::serve(state, addr, |bound| {
        let _ = emit(out, &serde_json::json!({ "address": bound.to_string(), "port": bound.port() }));
    }))
}

#[derive(Serialize)]
struct AssetStatus {
    name: &'static str,
    file: PathBuf,
    present: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
    /// `None` when no digest is published for the file.
    #[serde(skip_serializing_if = "Option::is_none")]
    verified: Option<bool>,
    url: &'static str,
    description: &'static str,
}

fn select_assets(names: &[String]) -> Result<Vec<AssetSpec>> {
    if names.is_empty() {
        return Ok(assets::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            assets::lookup(n).ok_or_else(|| {
                let known: Vec<&str> = assets::ALL.iter().map(|a| a.name).collect();
                AppError::invalid(format!("unknown asset `{n}`; known: {}", known.join(", ")))
            })
        })
        .collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn status(spec: &AssetSpec, dir: &Path, hash: bool) -> Result<AssetStatus> {
    let file = dir.join(spec.file);
    let present = file.is_file();
    let sha256 = if present && hash { Some(sha256_file(&file)?) } else { None };
    let verified = match (&sha256, spec.sha256_prefix) {
        (Some(h), Some(p)) => Some(h.starts_with(p)),
        _ => None,
    };
    Ok(AssetStatus {
        name: spec.name,
        file,
        present,
        sha256,
        verified,
        url: spec.url,
        description: spec.description,
    })
}

fn download(spec: &AssetSpec, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dest = dir.join(spec.file);
    let partial = dir.join(format!("{}.partial", spec.file));
    let mut resp = ureq::get(spec.url)
        .call()
        .map_err(|e| AppError::failed(format!("download {}: {e}", spec.url)))?;
    let mut reader = resp.body_mut().as_reader();
    let mut file = std::fs::File::create(&partial)?;
    std::io::copy(&mut reader, &mut file)?;
    file.sync_all()?;
    if let Some(p) = spec.sha256_prefix {
        let got = sha256_file(&partial)?;
        if !got.starts_with(p) {
            let _ = std::fs::remove_file(&partial);
            return Err(AppError::failed(format!("{}: checksum {got} does not start with {p}", spec.name)));
        }
    }
    std::fs::rename(&partial, &dest)?;
    Ok(())
}

fn assets_cmd(action: AssetsCmd, out: &mut dyn Write) -> Result<()> {
    match action {
        AssetsCmd::List { dir } => {
            let dir = dir.unwrap_or_else(assets::default_dir);
            for spec in assets::ALL {
                emit(out, &status(&spec, &dir, false)?)?;
            }
            Ok(())
        }
        AssetsCmd::Fetch { names, dir } => {
            let dir = dir.unwrap_or_else(assets::default_dir);
            for spec in select_assets(&names)? {
                if !dir.join(spec.file).is_file() {
                    download(&spec, &dir)?;
                }
                emit(out, &status(&spec, &dir, true)?)?;
            }
            Ok(())
        }
        AssetsCmd::Verify { names, dir } => {
            let dir = dir.unwrap_or_else(assets::default_dir);
            let mut bad = Vec::new();
            for spec in select_assets(&names)? {
                let s = status(&spec, &dir, true)?;
                if !s.present || s.verified == Some(false) {
                    bad.push(spec.name);
                }
                emit(out, &s)?;
            }
            if bad.is_empty() {
                Ok(())
            } else {
                Err(AppError::failed(format!("missing or corrupt: {}", bad.join(", ")))
                    .with_hint("run `deepsee assets fetch`"))
            }
        }
    }
}
