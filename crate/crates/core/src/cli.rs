//! Command-line front end: dataset synthesis, training, evaluation, saliency
//! export, gradient checking, and architecture inspection.
//!
//! Every artifact-producing command writes a manifest alongside its outputs
//! recording the exact invocation, resolved configuration, seeds, format
//! versions, and a content hash of the primary input, so any result can be
//! traced back to what produced it. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{
    all_segments, decode_dataset, export_metadata_csv, generate_synthetic, train_val_split,
    write_dataset, EEGDataset, SyntheticSpec, ValSplit, DATASET_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::model::{
    gradcheck, macs_estimate, param_count, shape_audit, Deformer, IpMode, IpSource, ModelConfig,
};
use crate::rng::RngState;
use crate::saliency::{average_saliency, export_saliency, saliency_map, ExportFormat, SaliencyMap};
use crate::tensor::Tensor;
use crate::train::{
    evaluate, fit, load_checkpoint, run_loso, save_checkpoint, sha256_hex, write_history_csv,
    write_loso_csv, MetricsReport, TrainConfig, CHECKPOINT_FORMAT_VERSION,
};

/// Manifest layout revision.
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Layout revisions of every on-disk artifact a run can touch.
#[derive(Debug, Clone, Serialize)]
pub struct FormatVersions {
    pub manifest: u32,
    pub dataset: u32,
    pub checkpoint: u32,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// The exact invocation that produced the artifacts.
    pub command: String,
    /// Seconds since the Unix epoch when the run finished.
    pub timestamp: u64,
    /// Seed after flag and DEFORMER_SEED resolution.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<String>,
    /// SHA-256 of the primary input file's bytes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    pub formats: FormatVersions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SyntheticSpec>,
}

fn versions() -> FormatVersions {
    FormatVersions {
        manifest: MANIFEST_FORMAT_VERSION,
        dataset: DATASET_FORMAT_VERSION,
        checkpoint: CHECKPOINT_FORMAT_VERSION,
    }
}

#[derive(Parser)]
#[command(
    name = "deformer",
    version,
    about = "EEG-Deformer: synthesize EEG, train, evaluate, and inspect the network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled multi-subject EEG dataset.
    GenerateData(GenerateDataArgs),
    /// Train on one dataset with a held-out validation fraction.
    Train(TrainArgs),
    /// Leave-one-subject-out cross validation.
    Loso(LosoArgs),
    /// Score a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Gradient-based channel saliency maps.
    Saliency(SaliencyArgs),
    /// Compare autodiff gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Shape table, parameter count, and arithmetic cost.
    Info(InfoArgs),
}

/// Parses argv and runs the selected command, mapping errors to exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout and exit clean; real parse
            // errors are usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => cmd_generate_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Loso(a) => cmd_loso(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Saliency(a) => cmd_saliency(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Info(a) => cmd_info(a),
    }
}

// ---- shared plumbing ----

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn argv_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_toml<T: Serialize>(value: &T, path: &Path, what: &str) -> Result<()> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("{what} serialization: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            create_dir(dir)?;
        }
    }
    Ok(())
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_dataset_hashed(path: &Path) -> Result<(EEGDataset, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let dataset = decode_dataset(&bytes, &path.display().to_string())?;
    Ok((dataset, sha256_hex(&bytes)))
}

/// DEFORMER_SEED wins over both flags and config files when set.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("DEFORMER_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("DEFORMER_SEED {v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(Error::Config("DEFORMER_SEED is not valid unicode".into()))
        }
    }
}

fn parse_ip_mode(s: &str) -> std::result::Result<IpMode, String> {
    match s {
        "power" => Ok(IpMode::Power),
        "mean" => Ok(IpMode::Mean),
        "std" => Ok(IpMode::Std),
        "none" => Ok(IpMode::None),
        _ => Err(format!("unknown ip mode {s:?} (power, mean, std, none)")),
    }
}

fn parse_ip_source(s: &str) -> std::result::Result<IpSource, String> {
    match s {
        "fine" => Ok(IpSource::Fine),
        "coarse" => Ok(IpSource::Coarse),
        "fused" => Ok(IpSource::Fused),
        _ => Err(format!("unknown ip source {s:?} (fine, coarse, fused)")),
    }
}

fn ip_mode_name(m: IpMode) -> &'static str {
    match m {
        IpMode::Power => "power",
        IpMode::Mean => "mean",
        IpMode::Std => "std",
        IpMode::None => "none",
    }
}

fn ip_source_name(s: IpSource) -> &'static str {
    match s {
        IpSource::Fine => "fine",
        IpSource::Coarse => "coarse",
        IpSource::Fused => "fused",
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn argmax_f32(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

// ---- configuration resolution: file < flags < DEFORMER_SEED ----

#[derive(Args, Default)]
struct ModelFlags {
    /// Model config TOML; geometry must match the dataset when both exist.
    #[arg(long, value_name = "FILE")]
    model_config: Option<PathBuf>,
    /// Convolution kernels; also the token count in every block.
    #[arg(long)]
    kernels: Option<usize>,
    /// Attention heads per block.
    #[arg(long)]
    heads: Option<usize>,
    /// Per-head attention dimension.
    #[arg(long)]
    head_dim: Option<usize>,
    /// Stacked coarse-to-fine blocks.
    #[arg(long)]
    depth: Option<usize>,
    /// FFN hidden width as a multiple of the token length.
    #[arg(long)]
    ffn_expansion: Option<usize>,
    /// Disable the fine-grained temporal-learning branch.
    #[arg(long)]
    no_ftl: bool,
    /// Tap only the last block instead of every block.
    #[arg(long)]
    no_dense: bool,
    /// Purification statistic: power, mean, std, or none.
    #[arg(long, value_parser = parse_ip_mode, value_name = "MODE")]
    ip_mode: Option<IpMode>,
    /// Tap location: fine, coarse, or fused.
    #[arg(long, value_parser = parse_ip_source, value_name = "SRC")]
    ip_source: Option<IpSource>,
}

impl ModelFlags {
    fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.kernels {
            cfg.kernels = v;
        }
        if let Some(v) = self.heads {
            cfg.n_heads = v;
        }
        if let Some(v) = self.head_dim {
            cfg.head_dim = Some(v);
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.ffn_expansion {
            cfg.ffn_expansion = v;
        }
        if self.no_ftl {
            cfg.ftl_enabled = false;
        }
        if self.no_dense {
            cfg.dense_enabled = false;
        }
        if let Some(v) = self.ip_mode {
            cfg.ip_mode = v;
        }
        if let Some(v) = self.ip_source {
            cfg.ip_source = v;
        }
    }

    /// Geometry comes from the dataset; a config file, when present, must
    /// agree with it before training starts.
    fn resolve(&self, dataset: &EEGDataset) -> Result<ModelConfig> {
        let mut cfg = match &self.model_config {
            Some(path) => {
                let cfg: ModelConfig = read_toml(path)?;
                check_geometry(&cfg, dataset)?;
                cfg
            }
            None => ModelConfig::with_geometry(
                dataset.channels,
                dataset.segment_len,
                dataset.sampling_rate,
                dataset.n_classes,
            ),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Default)]
struct GeometryFlags {
    /// EEG channels.
    #[arg(long)]
    channels: Option<usize>,
    /// Samples per segment.
    #[arg(long)]
    segment_len: Option<usize>,
    /// Sampling rate in Hz.
    #[arg(long)]
    sampling_rate: Option<f64>,
    /// Output classes.
    #[arg(long)]
    classes: Option<usize>,
}

impl GeometryFlags {
    fn complete(&self) -> Option<(usize, usize, f64, usize)> {
        Some((
            self.channels?,
            self.segment_len?,
            self.sampling_rate?,
            self.classes?,
        ))
    }

    fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.channels {
            cfg.channels = v;
        }
        if let Some(v) = self.segment_len {
            cfg.segment_len = v;
        }
        if let Some(v) = self.sampling_rate {
            cfg.sampling_rate = v;
        }
        if let Some(v) = self.classes {
            cfg.n_classes = v;
        }
    }
}

/// Config for the dataset-free commands (gradcheck, info): a file when
/// given, the full default stack when the geometry is fully spelled out,
/// otherwise the desk-scale toy network.
fn resolve_probe_config(model: &ModelFlags, geometry: &GeometryFlags) -> Result<ModelConfig> {
    let mut cfg = match (&model.model_config, geometry.complete()) {
        (Some(path), _) => read_toml(path)?,
        (None, Some((c, l, fs, k))) => ModelConfig::with_geometry(c, l, fs, k),
        (None, None) => ModelConfig::toy(),
    };
    geometry.apply(&mut cfg);
    model.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args, Default)]
struct TrainFlags {
    /// Train config TOML.
    #[arg(long, value_name = "FILE")]
    train_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate for the cosine schedule.
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Overrides the model's dropout probability during training.
    #[arg(long)]
    dropout: Option<f64>,
    /// Fraction of the training pool held out for validation.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Cut validation inside each subject instead of pooling.
    #[arg(long)]
    per_subject_val: bool,
    /// Run seed; the DEFORMER_SEED environment variable wins over this.
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.train_config {
            Some(path) => read_toml(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr0 {
            cfg.lr0 = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout_p = Some(v);
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
        if self.per_subject_val {
            cfg.val_split = ValSplit::PerSubject;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = env_seed()? {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_geometry(cfg: &ModelConfig, dataset: &EEGDataset) -> Result<()> {
    let mut clashes = Vec::new();
    if cfg.channels != dataset.channels {
        clashes.push(format!("channels {} vs {}", cfg.channels, dataset.channels));
    }
    if cfg.segment_len != dataset.segment_len {
        clashes.push(format!(
            "segment_len {} vs {}",
            cfg.segment_len, dataset.segment_len
        ));
    }
    if cfg.sampling_rate != dataset.sampling_rate {
        clashes.push(format!(
            "sampling_rate {} vs {}",
            cfg.sampling_rate, dataset.sampling_rate
        ));
    }
    if cfg.n_classes != dataset.n_classes {
        clashes.push(format!(
            "n_classes {} vs {}",
            cfg.n_classes, dataset.n_classes
        ));
    }
    if clashes.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "model geometry does not match the dataset: {}",
            clashes.join(", ")
        )))
    }
}

// ---- generate-data ----

#[derive(Args)]
struct GenerateDataArgs {
    /// Dataset spec TOML; a built-in two-class alpha-rhythm spec when absent.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Where to write the dataset.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Generator seed; DEFORMER_SEED wins over this.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a per-segment metadata CSV next to the dataset.
    #[arg(long)]
    metadata: bool,
}

fn cmd_generate_data(args: GenerateDataArgs) -> Result<()> {
    let (spec, spec_text): (SyntheticSpec, String) = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let spec = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (spec, text)
        }
        None => {
            let spec = SyntheticSpec::default();
            let text = toml::to_string_pretty(&spec)
                .map_err(|e| Error::Config(format!("spec serialization: {e}")))?;
            (spec, text)
        }
    };
    let seed = env_seed()?.unwrap_or(args.seed);
    let dataset = generate_synthetic(&spec, seed)?;
    ensure_parent(&args.out)?;
    write_dataset(&dataset, &args.out)?;
    if args.metadata {
        export_metadata_csv(&dataset, sibling(&args.out, ".meta.csv"))?;
    }
    let manifest = RunManifest {
        command: argv_line(),
        timestamp: now_unix(),
        seed,
        dataset_path: Some(args.out.display().to_string()),
        input_sha256: Some(sha256_hex(spec_text.as_bytes())),
        formats: versions(),
        model: None,
        train: None,
        synth: Some(spec),
    };
    write_manifest(&manifest, &sibling(&args.out, ".manifest.toml"))?;
    let segments: usize = dataset.subjects.iter().map(|s| s.segments.len()).sum();
    println!(
        "wrote {}: {} subjects, {} segments of {}x{} at {} Hz, {} classes",
        args.out.display(),
        dataset.subjects.len(),
        segments,
        dataset.channels,
        dataset.segment_len,
        dataset.sampling_rate,
        dataset.n_classes
    );
    Ok(())
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    write_toml(manifest, path, "manifest")
}

// ---- train ----

#[derive(Args)]
struct TrainArgs {
    /// Input dataset.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Output directory for checkpoint, history, metrics, and manifest.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (dataset, hash) = load_dataset_hashed(&args.data)?;
    let model_cfg = args.model.resolve(&dataset)?;
    let train_cfg = args.train.resolve()?;
    create_dir(&args.out)?;

    // Split membership, parameter init, and training draws each get a
    // derived stream so none of them can alias another.
    let root = RngState::new(train_cfg.seed);
    let (train_set, val_set) = train_val_split(
        &dataset,
        train_cfg.val_fraction,
        root.derive(1).seed,
        train_cfg.val_split,
    )?;
    let mut model = Deformer::<f32>::new(model_cfg.clone(), &root.derive(2))?;
    let fit_cfg = TrainConfig {
        seed: root.derive(3).seed,
        ..train_cfg.clone()
    };
    let result = fit(&mut model, &train_set, &val_set, &fit_cfg)?;

    save_checkpoint(&result.best, args.out.join("best.ckpt"))?;
    write_history_csv(&result.history, args.out.join("history.csv"))?;
    let report = evaluate(&model, &result.best, &val_set)?;
    write_toml(&report, &args.out.join("metrics.toml"), "metrics")?;
    let manifest = RunManifest {
        command: argv_line(),
        timestamp: now_unix(),
        seed: train_cfg.seed,
        dataset_path: Some(args.data.display().to_string()),
        input_sha256: Some(hash),
        formats: versions(),
        model: Some(model_cfg),
        train: Some(train_cfg),
        synth: None,
    };
    write_manifest(&manifest, &args.out.join("manifest.toml"))?;
    println!(
        "trained {} epochs on {} segments ({} validation); best epoch {}, val accuracy {:.4}, macro F1 {:.4}",
        result.history.len(),
        train_set.len(),
        val_set.len(),
        result.best.epoch,
        result.best.best_val_acc,
        report.macro_f1
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

// ---- loso ----

#[derive(Args)]
struct LosoArgs {
    /// Input dataset.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Output directory; one subdirectory per held-out subject.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

fn cmd_loso(args: LosoArgs) -> Result<()> {
    let (dataset, hash) = load_dataset_hashed(&args.data)?;
    let model_cfg = args.model.resolve(&dataset)?;
    let train_cfg = args.train.resolve()?;
    create_dir(&args.out)?;

    let outcome = run_loso(&dataset, &model_cfg, &train_cfg)?;
    for fold in &outcome.folds {
        let dir = args.out.join(&fold.subject_id);
        create_dir(&dir)?;
        save_checkpoint(&fold.checkpoint, dir.join("best.ckpt"))?;
        write_history_csv(&fold.history, dir.join("history.csv"))?;
        write_toml(&fold.report, &dir.join("metrics.toml"), "metrics")?;
    }
    write_loso_csv(&outcome, args.out.join("loso.csv"))?;
    let manifest = RunManifest {
        command: argv_line(),
        timestamp: now_unix(),
        seed: train_cfg.seed,
        dataset_path: Some(args.data.display().to_string()),
        input_sha256: Some(hash),
        formats: versions(),
        model: Some(model_cfg),
        train: Some(train_cfg),
        synth: None,
    };
    write_manifest(&manifest, &args.out.join("manifest.toml"))?;
    for fold in &outcome.folds {
        println!(
            "  {}: accuracy {:.4}, macro F1 {:.4}",
            fold.subject_id, fold.report.accuracy, fold.report.macro_f1
        );
    }
    let s = &outcome.summary;
    println!(
        "mean accuracy {:.4} +/- {:.4}; mean macro F1 {:.4} +/- {:.4}",
        s.acc_mean, s.acc_std, s.f1_mean, s.f1_std
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

// ---- eval ----

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score; the model is rebuilt from its config echo.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Dataset whose every segment is scored.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Also write metrics.toml and a manifest here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (model, _) = ckpt.restore_model()?;
    let (dataset, hash) = load_dataset_hashed(&args.data)?;
    check_geometry(&model.config, &dataset)?;
    let segments = all_segments(&dataset);
    let report = evaluate(&model, &ckpt, &segments)?;
    println!(
        "checkpoint {} (epoch {}) on {} segments",
        args.checkpoint.display(),
        ckpt.epoch,
        segments.len()
    );
    print_metrics(&report);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_toml(&report, &dir.join("metrics.toml"), "metrics")?;
        let manifest = RunManifest {
            command: argv_line(),
            timestamp: now_unix(),
            seed: 0,
            dataset_path: Some(args.data.display().to_string()),
            input_sha256: Some(hash),
            formats: versions(),
            model: Some(ckpt.model_config.clone()),
            train: None,
            synth: None,
        };
        write_manifest(&manifest, &dir.join("manifest.toml"))?;
    }
    Ok(())
}

fn print_metrics(report: &MetricsReport) {
    println!("accuracy {:.4}", report.accuracy);
    println!("macro F1 {:.4}", report.macro_f1);
    for (k, f1) in report.per_class_f1.iter().enumerate() {
        println!("  class {k} F1 {f1:.4}");
    }
    println!("confusion (rows are truth):");
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
        println!("  {}", cells.join(" "));
    }
}

// ---- saliency ----

#[derive(Clone, Copy, Debug)]
enum ExportChoice {
    Csv,
    Pgm,
    Both,
}

fn parse_export(s: &str) -> std::result::Result<ExportChoice, String> {
    match s {
        "csv" => Ok(ExportChoice::Csv),
        "pgm" => Ok(ExportChoice::Pgm),
        "both" => Ok(ExportChoice::Both),
        _ => Err(format!("unknown format {s:?} (csv, pgm, both)")),
    }
}

#[derive(Args)]
struct SaliencyArgs {
    /// Checkpoint whose network is probed.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Dataset providing the probe segments.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Class whose logit is differentiated.
    #[arg(long)]
    class: usize,
    /// Restrict to one subject id.
    #[arg(long, value_name = "ID")]
    subject: Option<String>,
    /// csv, pgm, or both.
    #[arg(long, default_value = "both", value_parser = parse_export)]
    format: ExportChoice,
    /// Output directory: one map per subject plus the grand average.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn export_map(map: &SaliencyMap, dir: &Path, stem: &str, choice: ExportChoice) -> Result<()> {
    if matches!(choice, ExportChoice::Csv | ExportChoice::Both) {
        export_saliency(map, dir.join(format!("{stem}.csv")), ExportFormat::Csv)?;
    }
    if matches!(choice, ExportChoice::Pgm | ExportChoice::Both) {
        export_saliency(map, dir.join(format!("{stem}.pgm")), ExportFormat::Pgm)?;
    }
    Ok(())
}

fn cmd_saliency(args: SaliencyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (model, _) = ckpt.restore_model()?;
    let (dataset, hash) = load_dataset_hashed(&args.data)?;
    check_geometry(&model.config, &dataset)?;
    if args.class >= dataset.n_classes {
        return Err(Error::Config(format!(
            "class {} out of range for {} classes",
            args.class, dataset.n_classes
        )));
    }
    create_dir(&args.out)?;

    let shape = [dataset.channels, dataset.segment_len];
    let mut subject_maps = Vec::new();
    for subject in &dataset.subjects {
        if args.subject.as_ref().is_some_and(|s| s != &subject.subject_id) {
            continue;
        }
        let maps = subject
            .segments
            .iter()
            .map(|seg| {
                let x = Tensor::from_vec(seg.samples.clone(), &shape)?;
                saliency_map(&model, &x, args.class, &subject.subject_id)
            })
            .collect::<Result<Vec<_>>>()?;
        let avg = average_saliency(&maps)?;
        export_map(&avg, &args.out, &subject.subject_id, args.format)?;
        let top = argmax_f32(&avg.channel_scores);
        println!(
            "{}: {} segments, top channel ch{} (score {:.3})",
            subject.subject_id,
            maps.len(),
            top,
            avg.channel_scores[top]
        );
        subject_maps.push(avg);
    }
    if subject_maps.is_empty() {
        return Err(Error::Lookup {
            kind: "subject",
            name: args.subject.clone().unwrap_or_default(),
        });
    }
    let grand = average_saliency(&subject_maps)?;
    export_map(&grand, &args.out, "average", args.format)?;
    let top = argmax_f32(&grand.channel_scores);
    println!(
        "average: top channel ch{} (score {:.3})",
        top, grand.channel_scores[top]
    );
    let manifest = RunManifest {
        command: argv_line(),
        timestamp: now_unix(),
        seed: 0,
        dataset_path: Some(args.data.display().to_string()),
        input_sha256: Some(hash),
        formats: versions(),
        model: Some(ckpt.model_config.clone()),
        train: None,
        synth: None,
    };
    write_manifest(&manifest, &args.out.join("manifest.toml"))?;
    Ok(())
}

// ---- gradcheck ----

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    geometry: GeometryFlags,
    /// Relative-error threshold.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    if !(args.tolerance.is_finite() && args.tolerance > 0.0) {
        return Err(Error::Config(format!(
            "tolerance {} must be a positive finite number",
            args.tolerance
        )));
    }
    let cfg = resolve_probe_config(&args.model, &args.geometry)?;
    let report = gradcheck(&cfg, args.seed, args.tolerance)?;
    for g in &report.groups {
        println!("{:<26} max rel err {:.3e}", g.name, g.max_rel_err);
    }
    if report.passed() {
        println!(
            "gradient check passed: {} groups within {:.1e}",
            report.groups.len(),
            report.tolerance
        );
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|g| g.name.as_str()).collect();
        Err(Error::Autodiff(format!(
            "gradient check failed at tolerance {:.1e}: {}",
            report.tolerance,
            names.join(", ")
        )))
    }
}

// ---- info ----

#[derive(Args)]
struct InfoArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    geometry: GeometryFlags,
}

fn cmd_info(args: InfoArgs) -> Result<()> {
    let cfg = resolve_probe_config(&args.model, &args.geometry)?;
    let audit = shape_audit(&cfg)?;
    let params = param_count(&cfg)?;
    let macs = macs_estimate(&cfg)?;
    println!(
        "EEG-Deformer: {} channels x {} samples at {} Hz, {} classes",
        cfg.channels, cfg.segment_len, cfg.sampling_rate, cfg.n_classes
    );
    println!(
        "kernels {}, heads {}, head dim {}, depth {}, ffn x{}, kernel length {}",
        cfg.kernels,
        cfg.n_heads,
        cfg.attn_dim(),
        cfg.depth,
        cfg.ffn_expansion,
        audit.kernel_len
    );
    println!(
        "switches: ftl {}, dense taps {}, ip mode {}, ip source {}, dropout {}",
        on_off(cfg.ftl_enabled),
        on_off(cfg.dense_enabled),
        ip_mode_name(cfg.ip_mode),
        ip_source_name(cfg.ip_source),
        cfg.dropout_p
    );
    println!("stages:");
    for stage in &audit.stages {
        let dims: Vec<String> = stage.shape.iter().map(|d| d.to_string()).collect();
        println!("  {:<26} [{}]", stage.name, dims.join(", "));
    }
    let tokens: Vec<String> = audit.token_lens.iter().map(|l| l.to_string()).collect();
    println!("token lengths: {}", tokens.join(", "));
    println!(
        "embedding: {} flattened + {} bypass = {}",
        audit.flat_len, audit.bypass_len, audit.embedding_len
    );
    println!("parameters: {params}");
    println!("multiply-accumulates per forward: {macs}");
    Ok(())
}
