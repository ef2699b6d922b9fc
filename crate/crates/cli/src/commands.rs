//! One function per subcommand. Each returns `Ok(())` on success; any error
//! bubbles to `main`, which prints it as a JSON diagnostic and exits 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use evdance_core::adapt::{
    adapt_run, evaluate_baseline, evaluate_target, pretrain_reconstruction, pretrain_source,
    reconstruction_mse, resolve_banks, train_accuracy, AdaptConfig, TrainState,
};
use evdance_core::clipbank::{
    save_feature_bank, stub_text_features, text_bank_to_bytes, visual_bank_to_bytes,
    VisualEmbedder,
};
use evdance_core::event_io::{synthesize_dataset, EventStream, Split};
use evdance_core::models::{Checkpoint, Classifier, ReconstructionNet};
use evdance_core::repr::{
    build_est, build_stack_image, build_voxel_grid, RepresentationKind,
};

use crate::dataset::{load_dataset, load_source_frames, write_synth_dataset};
use crate::log;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReprArg {
    Stack,
    Voxel,
    Est,
}

impl ReprArg {
    fn kind(self) -> RepresentationKind {
        match self {
            ReprArg::Stack => RepresentationKind::Stack,
            ReprArg::Voxel => RepresentationKind::Voxel,
            ReprArg::Est => RepresentationKind::Est,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BankArg {
    Text,
    Visual,
}

#[derive(Args)]
pub struct GenSyntheticArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    streams_per_class: usize,
    #[arg(long, default_value_t = 16)]
    width: u16,
    #[arg(long, default_value_t = 16)]
    height: u16,
    /// Events per stream.
    #[arg(long, default_value_t = 2000)]
    events: usize,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_synthetic(args: &GenSyntheticArgs) -> Result<()> {
    let ds = synthesize_dataset(
        args.seed,
        args.classes,
        args.streams_per_class,
        args.width,
        args.height,
        args.events,
    )?;
    write_synth_dataset(&ds, &args.out)?;
    log::info(format!(
        "wrote {} streams ({} classes, {}x{}) to {}",
        ds.items.len(),
        args.classes,
        args.width,
        args.height,
        args.out.display()
    ));
    Ok(())
}

#[derive(Args)]
pub struct GenFeaturesArgs {
    /// Dataset directory (for class names and train frames).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    kind: BankArg,
    /// Feature dimensionality.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bank file to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_features(args: &GenFeaturesArgs) -> Result<()> {
    let loaded = load_dataset(&args.data)?;
    let bytes = match args.kind {
        BankArg::Text => {
            let bank = stub_text_features(&loaded.manifest.classes, args.dim, args.seed)?;
            text_bank_to_bytes(&bank)
        }
        BankArg::Visual => {
            // Per-sample features of the ground-truth train frames under a
            // seeded random projection; stands in for an offline image
            // encoder pass.
            let (frames, _) = load_source_frames(&args.data, &loaded.manifest)?;
            let embedder = VisualEmbedder::projection(frames.cols(), args.dim, args.seed)?;
            let ids: Vec<String> = loaded
                .manifest
                .entries
                .iter()
                .filter(|e| e.split == Split::Train)
                .map(|e| {
                    Path::new(&e.path)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| e.path.clone())
                })
                .collect();
            let features = embedder.embed(&ids, &frames)?;
            let mut table = BTreeMap::new();
            for (i, id) in ids.iter().enumerate() {
                table.insert(id.clone(), features.row(i).to_vec());
            }
            visual_bank_to_bytes(args.dim, &table)
        }
    };
    save_feature_bank(&args.out, &bytes)?;
    log::info(format!("wrote feature bank to {}", args.out.display()));
    Ok(())
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Portable event stream file.
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: ReprArg,
    #[arg(long, default_value_t = 4)]
    bins: usize,
    #[arg(long, default_value_t = 512)]
    count_threshold: usize,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn convert(args: &ConvertArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let (stream, warnings) = evdance_core::event_io::parse_portable_events(&text)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    if !warnings.is_empty() {
        log::info(format!("{} timestamp-order warnings", warnings.len()));
    }
    let value = match args.kind {
        ReprArg::Stack => {
            let s = build_stack_image(&stream, args.count_threshold)?;
            json!({
                "kind": "stack",
                "width": s.width,
                "height": s.height,
                "count_used": s.count_used,
                "shape": [s.height, s.width],
                "data": s.data,
            })
        }
        ReprArg::Voxel => {
            let v = build_voxel_grid(&stream, args.bins)?;
            json!({
                "kind": "voxel",
                "width": v.width,
                "height": v.height,
                "bins": v.bins,
                "t_min": v.t_min,
                "t_max": v.t_max,
                "shape": [v.height, v.width, v.bins],
                "data": v.data,
            })
        }
        ReprArg::Est => {
            let e = build_est(&stream, args.bins)?;
            json!({
                "kind": "est",
                "width": e.width,
                "height": e.height,
                "bins": e.bins,
                "shape": [e.height, e.width, e.bins, 2],
                "data": e.data,
            })
        }
    };
    write_output(&args.out, &serde_json::to_string_pretty(&value).expect("tensor serializes"))
}

/// Flags shared by the training subcommands; each `Option` overrides the
/// corresponding config field when present.
#[derive(Args)]
pub struct TrainCommonArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

impl TrainCommonArgs {
    fn load_config(&self) -> Result<AdaptConfig> {
        let mut config = match &self.config {
            None => AdaptConfig::default(),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                AdaptConfig::from_json(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(batch) = self.batch {
            config.batch_size = batch;
        }
        Ok(config)
    }
}

#[derive(Args)]
pub struct PretrainSourceArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn pretrain_source_cmd(args: &PretrainSourceArgs) -> Result<()> {
    let mut config = args.common.load_config()?;
    if let Some(epochs) = args.common.epochs {
        config.source_epochs = epochs;
    }
    if let Some(lr) = args.common.lr {
        config.pretrain_lr = lr;
    }
    config.validate()?;

    let loaded = load_dataset(&args.common.data)?;
    let (frames, labels) = load_source_frames(&args.common.data, &loaded.manifest)?;
    let k = loaded.manifest.classes.len();
    let model = pretrain_source(&frames, &labels, k, &config)?;
    model.to_checkpoint().save(&args.out)?;
    log::info(format!(
        "source model: train accuracy {:.4} on {} frames, saved to {}",
        train_accuracy(&model, &frames, &labels),
        labels.len(),
        args.out.display()
    ));
    Ok(())
}

#[derive(Args)]
pub struct PretrainReconArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn pretrain_recon_cmd(args: &PretrainReconArgs) -> Result<()> {
    let mut config = args.common.load_config()?;
    if let Some(epochs) = args.common.epochs {
        config.recon_epochs = epochs;
    }
    if let Some(lr) = args.common.lr {
        config.pretrain_lr = lr;
    }
    if let Some(windows) = args.windows {
        config.windows = windows;
    }
    if let Some(bins) = args.bins {
        config.bins = bins;
    }
    config.validate()?;

    let loaded = load_dataset(&args.common.data)?;
    let streams: Vec<&EventStream> = loaded.data.train.iter().map(|s| &s.stream).collect();
    let net = pretrain_reconstruction(&streams, &config)?;
    net.to_checkpoint().save(&args.out)?;
    log::info(format!(
        "reconstruction net: mse {:.6} over {} streams, saved to {}",
        reconstruction_mse(&net, &streams, &config)?,
        streams.len(),
        args.out.display()
    ));
    Ok(())
}

#[derive(Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
    /// Pretrained source classifier checkpoint (required).
    #[arg(long)]
    source_ckpt: PathBuf,
    /// Pretrained reconstruction checkpoint (required).
    #[arg(long)]
    recon_ckpt: PathBuf,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Text feature bank file; a seeded stand-in is generated when absent.
    #[arg(long)]
    feature_bank: Option<PathBuf>,
    /// Visual feature bank file; a seeded projection is used when absent.
    #[arg(long)]
    visual_bank: Option<PathBuf>,
    /// Feature dimensionality of generated stand-in banks.
    #[arg(long)]
    stub_feature_dim: Option<usize>,
    /// Output directory for checkpoints and reports.
    #[arg(long)]
    out: PathBuf,
}

pub fn adapt_cmd(args: &AdaptArgs) -> Result<()> {
    let mut config = args.common.load_config()?;
    if let Some(epochs) = args.common.epochs {
        config.adapt_epochs = epochs;
    }
    if let Some(lr) = args.common.lr {
        config.lr = lr;
    }
    if let Some(windows) = args.windows {
        config.windows = windows;
    }
    if let Some(bins) = args.bins {
        config.bins = bins;
    }
    if let Some(dim) = args.stub_feature_dim {
        config.feature_dim = dim;
    }
    if let Some(path) = &args.feature_bank {
        config.text_bank_path = Some(path.to_string_lossy().into_owned());
    }
    if let Some(path) = &args.visual_bank {
        config.visual_bank_path = Some(path.to_string_lossy().into_owned());
    }
    config.validate()?;

    let loaded = load_dataset(&args.common.data)?;
    let k = loaded.manifest.classes.len();
    let frame_dim = loaded.manifest.width as usize * loaded.manifest.height as usize;

    let fs_model = Classifier::from_checkpoint(&Checkpoint::load(&args.source_ckpt)?)?;
    if fs_model.config().num_classes != k {
        bail!(
            "source checkpoint has {} classes, manifest has {k}",
            fs_model.config().num_classes
        );
    }
    if fs_model.config().input_dim != frame_dim {
        bail!(
            "source checkpoint expects {}-dim input, frames are {frame_dim}-dim",
            fs_model.config().input_dim
        );
    }
    let fr_net = ReconstructionNet::from_checkpoint(&Checkpoint::load(&args.recon_ckpt)?)?;
    let rc = fr_net.config();
    if (rc.width, rc.height) != (loaded.manifest.width, loaded.manifest.height) {
        bail!(
            "reconstruction checkpoint is {}x{}, manifest is {}x{}",
            rc.width,
            rc.height,
            loaded.manifest.width,
            loaded.manifest.height
        );
    }
    if rc.bins != config.bins {
        bail!("reconstruction checkpoint uses {} bins, config says {}", rc.bins, config.bins);
    }

    let banks = resolve_banks(&config, &loaded.manifest.classes, frame_dim)?;
    banks.text.require_k(k)?;

    let baseline = evaluate_baseline(&fs_model, &loaded.data.test, &config)?;
    log::info(format!("baseline source-on-events accuracy: {:.4}", baseline.accuracy));

    let state = TrainState::new(fs_model, fr_net, &config, loaded.data.width, loaded.data.height)?;
    let outcome = adapt_run(state, &loaded.data, &banks, &config)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    outcome.state.save(args.out.join("state.evdc"))?;
    for (i, kind) in RepresentationKind::all().iter().enumerate() {
        outcome.best.checkpoints[i].save(args.out.join(format!("best-{}.evdc", kind.name())))?;
    }
    write_lines(
        &args.out.join("losses.jsonl"),
        outcome.reports.iter().map(|r| r.to_json_line()),
    )?;
    write_lines(
        &args.out.join("history.jsonl"),
        outcome.history.iter().map(|h| serde_json::to_string(h).expect("eval serializes")),
    )?;
    write_lines(
        &args.out.join("stats.jsonl"),
        outcome.stats.iter().map(|s| serde_json::to_string(s).expect("stats serialize")),
    )?;

    let final_by_model: BTreeMap<&str, f64> = outcome
        .history
        .iter()
        .filter(|h| h.epoch + 1 == config.adapt_epochs)
        .map(|h| (h.model.as_str(), h.accuracy))
        .collect();
    let kinds = RepresentationKind::all();
    let summary = json!({
        "baseline_accuracy": baseline.accuracy,
        "best": kinds.iter().enumerate().map(|(i, kind)| {
            (kind.name().to_string(), json!({
                "accuracy": outcome.best.accuracy[i],
                "epoch": outcome.best.epoch[i],
            }))
        }).collect::<serde_json::Map<_, _>>(),
        "final": final_by_model,
        "anchor_entropy": {
            "initial": outcome.stats.first().map(|s| s.anchor_entropy),
            "final": outcome.stats.last().map(|s| s.anchor_entropy),
        },
        "agreement_rate": {
            "initial": outcome.stats.first().map(|s| s.agreement_rate),
            "final": outcome.stats.last().map(|s| s.agreement_rate),
        },
    });
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;

    if log::enabled(log::Level::Debug) {
        for h in &outcome.history {
            log::debug(format!(
                "epoch {:>3} {:>6}: accuracy {:.4}",
                h.epoch, h.model, h.accuracy
            ));
        }
    }
    for (i, kind) in kinds.iter().enumerate() {
        log::info(format!(
            "{}: best accuracy {:.4} at epoch {}",
            kind.name(),
            outcome.best.accuracy[i],
            outcome.best.epoch[i]
        ));
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Classifier checkpoint to evaluate (required).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "voxel")]
    representation: ReprArg,
    #[arg(long, default_value_t = 4)]
    bins: usize,
    #[arg(long, default_value_t = 512)]
    count_threshold: usize,
    /// Treat the checkpoint as the source model and feed it bin-averaged
    /// voxel grids instead of a full representation.
    #[arg(long)]
    baseline: bool,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let loaded = load_dataset(&args.data)?;
    let model = Classifier::from_checkpoint(&Checkpoint::load(&args.checkpoint)?)?;
    if model.config().num_classes != loaded.manifest.classes.len() {
        bail!(
            "checkpoint has {} classes, manifest has {}",
            model.config().num_classes,
            loaded.manifest.classes.len()
        );
    }
    let config = AdaptConfig {
        bins: args.bins,
        stack_threshold: args.count_threshold,
        ..AdaptConfig::default()
    };
    let report = if args.baseline {
        evaluate_baseline(&model, &loaded.data.test, &config)?
    } else {
        evaluate_target(&model, &loaded.data.test, args.representation.kind(), &config)?
    };
    write_output(&args.out, &report.to_json())
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text.to_string() + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
