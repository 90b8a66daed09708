//! The `har` command line: `ingest`, `train`, `eval`, `predict`.
//!
//! Exit codes are a stable contract: 0 success, 1 usage, 2 dataset,
//! 3 divergence, 4 checkpoint, 5 labeling. Logs go to standard error
//! (`HAR_LOG={error|info|debug}`); machine-readable output goes to files
//! or standard output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, quantize_params, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{parse_recording, scan_dataset, RepairPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    confusion, evaluate_directory, majority_label, metrics, predict, predict_normalized,
    render_report, Averaging, EvalMode,
};
use crate::preprocess::{prepare, segment, write_windows};
use crate::train::train;

#[derive(Parser)]
#[command(
    name = "har",
    version,
    about = "Human activity recognition on motion-capture recordings: a depthwise-separable 1D CNN built from scratch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Scan a dataset tree; write the manifest and per-class window counts
    Ingest(IngestArgs),
    /// Train on a dataset tree; write checkpoint, history, and reports
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset tree
    Eval(EvalArgs),
    /// Classify one recording with a checkpoint
    Predict(PredictArgs),
}

#[derive(Args, Default)]
struct SharedArgs {
    /// Dataset root: <subject>/{normal,aggressive}/<activity>.txt
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Directory for generated files [default: har_out]
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Config file of `key = value` lines; flags override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; split/init/shuffle draw named substreams from it [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap [default: machine parallelism]
    #[arg(long)]
    threads: Option<usize>,
    /// Bad-value repair: hold-last or drop-row [default: hold-last]
    #[arg(long, value_name = "POLICY")]
    repair: Option<String>,
}

#[derive(Args, Default)]
struct WindowArgs {
    /// Samples per window [default: 200]
    #[arg(long)]
    window_len: Option<usize>,
    /// Offset between consecutive windows [default: 100]
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    window: WindowArgs,
    /// Also export raw segmented windows to this HARW file
    #[arg(long, value_name = "FILE")]
    export_windows: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    window: WindowArgs,
    /// Training fraction of the windows [default: 0.7]
    #[arg(long)]
    split_ratio: Option<f64>,
    /// First conv kernel length [default: 60]
    #[arg(long)]
    conv1_kernel: Option<usize>,
    /// First conv output channels [default: 60]
    #[arg(long)]
    conv1_channels: Option<usize>,
    /// Max-pool window [default: 20]
    #[arg(long)]
    pool_window: Option<usize>,
    /// Max-pool stride [default: 2]
    #[arg(long)]
    pool_stride: Option<usize>,
    /// Second conv kernel length [default: 6]
    #[arg(long)]
    conv2_kernel: Option<usize>,
    /// Second conv output channels [default: 60]
    #[arg(long)]
    conv2_channels: Option<usize>,
    /// Fully connected units [default: 1000]
    #[arg(long)]
    fc_units: Option<usize>,
    /// L2 penalty coefficient [default: 0.0001]
    #[arg(long)]
    l2_lambda: Option<f64>,
    /// Windows per gradient step [default: 200]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 1000]
    #[arg(long)]
    epochs: Option<usize>,
    /// Step size [default: 0.0001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// adam or sgd [default: adam]
    #[arg(long)]
    optimizer: Option<String>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam denominator offset [default: 0.00000001]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Stop after this many epochs without test-loss improvement [default: off]
    #[arg(long)]
    early_stop_patience: Option<usize>,
    /// Minimum improvement that resets the patience counter [default: 0]
    #[arg(long)]
    early_stop_min_delta: Option<f64>,
    /// Metric averaging: weighted, macro, or micro [default: weighted]
    #[arg(long)]
    averaging: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Metric averaging: weighted, macro, or micro [default: weighted]
    #[arg(long)]
    averaging: Option<String>,
    /// Score one majority vote per recording instead of per window
    #[arg(long)]
    majority: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Checkpoint to predict with
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Recording file to classify
    #[arg(long, value_name = "FILE")]
    file: Option<PathBuf>,
}

fn resolve(shared: &SharedArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &shared.config {
        cfg.apply_file(path)?;
    }
    if let Some(d) = &shared.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(d) = &shared.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    if let Some(t) = shared.threads {
        cfg.threads = Some(t);
    }
    if let Some(r) = &shared.repair {
        cfg.repair = RepairPolicy::parse(r)?;
    }
    Ok(cfg)
}

fn apply_window_args(cfg: &mut RunConfig, window: &WindowArgs) {
    if let Some(w) = window.window_len {
        cfg.window_len = w;
    }
    if let Some(s) = window.stride {
        cfg.stride = s;
    }
}

fn require_data_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.data_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("--data-dir is required".into()))
}

fn require_path(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::InvalidConfig(format!("{flag} is required")))
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_ingest(cfg: &RunConfig, export: Option<&Path>) -> Result<()> {
    let data_dir = require_data_dir(cfg)?;
    let manifest = scan_dataset(&data_dir)?;
    create_out_dir(&cfg.out_dir)?;
    let manifest_path = cfg.out_dir.join("manifest.csv");
    manifest.write_csv(&manifest_path)?;
    log::info!("{} recordings, {} classes -> {}", manifest.entries.len(), manifest.class_names.len(), manifest_path.display());

    let recordings = manifest.load_recordings(cfg.repair)?;
    let mut counts = vec![0usize; manifest.class_names.len()];
    for rec in &recordings {
        let idx = manifest.class_index(&rec.activity)?;
        let t = rec.num_samples();
        if t >= cfg.window_len {
            counts[idx] += (t - cfg.window_len) / cfg.stride + 1;
        }
    }
    let mut body = String::from("class_index,activity,windows\n");
    for (i, name) in manifest.class_names.iter().enumerate() {
        body.push_str(&format!("{i},{name},{}\n", counts[i]));
    }
    print!("{body}");
    let counts_path = cfg.out_dir.join("class_counts.csv");
    fs::write(&counts_path, &body).map_err(|e| Error::io(&counts_path, e))?;

    if let Some(export_path) = export {
        let mut windows = Vec::new();
        for rec in &recordings {
            let label = manifest.class_index(&rec.activity)?;
            windows.extend(segment(rec, cfg.window_len, cfg.stride, label)?);
        }
        write_windows(&windows, manifest.class_names.len(), export_path)?;
        log::info!("{} windows exported to {}", windows.len(), export_path.display());
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data_dir = require_data_dir(cfg)?;
    create_out_dir(&cfg.out_dir)?;
    let echo = cfg.echo();
    print!("{echo}");
    let config_path = cfg.out_dir.join("config.txt");
    fs::write(&config_path, &echo).map_err(|e| Error::io(&config_path, e))?;

    let manifest = scan_dataset(&data_dir)?;
    let recordings = manifest.load_recordings(cfg.repair)?;
    let labels: Vec<usize> = manifest
        .entries
        .iter()
        .map(|e| manifest.class_index(&e.activity))
        .collect::<Result<_>>()?;
    let num_classes = manifest.class_names.len();
    let channels = recordings[0].num_channels();
    let model_config = cfg.model_config(channels, num_classes);
    model_config.validate()?;

    let dataset = prepare(
        &recordings,
        &labels,
        num_classes,
        cfg.window_len,
        cfg.stride,
        cfg.split_ratio,
        cfg.seed,
    )?;
    log::info!(
        "{} windows ({} train / {} test), {} channels, {} classes",
        dataset.windows.len(),
        dataset.train_indices.len(),
        dataset.test_indices.len(),
        channels,
        num_classes
    );

    let outcome = train(&dataset, &model_config, &cfg.train_config())?;
    outcome.history.write_csv(&cfg.out_dir.join("history.csv"))?;

    // the checkpoint stores 32-bit parameters; report with the same values
    // so a later `har eval` over these windows reproduces the numbers
    let params = quantize_params(&outcome.best_params);
    let checkpoint_path = cfg.out_dir.join("model.harn");
    save_checkpoint(
        &checkpoint_path,
        &model_config,
        cfg.stride,
        &manifest.class_names,
        &dataset.normalizer,
        &params,
    )?;

    let mut predicted = Vec::with_capacity(dataset.test_indices.len());
    let mut truth = Vec::with_capacity(dataset.test_indices.len());
    for w in dataset.test_windows() {
        let (class, _) = predict_normalized(&model_config, &params, w)?;
        predicted.push(class);
        truth.push(w.label);
    }
    let cm = confusion(&predicted, &truth, manifest.class_names.clone())?;
    let report = metrics(&cm, cfg.averaging)?;
    render_report(&cm, &report, &cfg.out_dir)?;

    println!("checkpoint = {}", checkpoint_path.display());
    println!("best_epoch = {}", outcome.best_epoch);
    println!("test_accuracy = {}", report.accuracy);
    println!("test_precision = {}", report.precision);
    println!("test_recall = {}", report.recall);
    println!("test_f1 = {}", report.f1);
    println!(
        "note: the 70/30 split is window-level, so overlapping windows of one trial can land in both partitions; for subject-independent numbers evaluate a held-out tree with `har eval`"
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, majority: bool) -> Result<()> {
    let data_dir = require_data_dir(cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let mode = if majority { EvalMode::TrialMajority } else { EvalMode::PerWindow };
    let report = evaluate_directory(&ckpt, &data_dir, cfg.repair, cfg.averaging, mode)?;
    create_out_dir(&cfg.out_dir)?;
    render_report(&report.confusion, &report.metrics, &cfg.out_dir)?;
    println!("windows = {}", report.confusion.total());
    println!("accuracy = {}", report.metrics.accuracy);
    println!("precision = {}", report.metrics.precision);
    println!("recall = {}", report.metrics.recall);
    println!("f1 = {}", report.metrics.f1);
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, file: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let recording = parse_recording(file, cfg.repair)?;
    let windows = segment(&recording, ckpt.model.input_len, ckpt.stride, 0)?;
    if windows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has {} samples, shorter than one {}-sample window",
            file.display(),
            recording.num_samples(),
            ckpt.model.input_len
        )));
    }
    let mut classes = Vec::with_capacity(windows.len());
    let mut probability_sums = vec![0.0f64; ckpt.class_names.len()];
    for (i, w) in windows.iter().enumerate() {
        let (class, probs) = predict(&ckpt.model, &ckpt.params, &ckpt.normalizer, w)?;
        println!("window {i}: {} p={}", ckpt.class_names[class], probs.data()[class]);
        for (sum, p) in probability_sums.iter_mut().zip(probs.data()) {
            *sum += p;
        }
        classes.push(class);
    }
    let vote = majority_label(&classes, ckpt.class_names.len()).expect("windows is nonempty");
    let mean_p = probability_sums[vote] / windows.len() as f64;
    println!("{} p={}", ckpt.class_names[vote], mean_p);
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 1,
        Error::Divergence { .. } => 3,
        Error::CorruptCheckpoint { .. } => 4,
        Error::UnknownClass(_) | Error::InvalidTarget(_) => 5,
        _ => 2,
    }
}

fn init_logger() {
    let env = env_logger::Env::new().filter_or("HAR_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logger();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Ingest(args) => resolve(&args.shared).and_then(|mut cfg| {
            apply_window_args(&mut cfg, &args.window);
            configure_threads(cfg.threads);
            cmd_ingest(&cfg, args.export_windows.as_deref())
        }),
        Command::Train(args) => resolve(&args.shared).and_then(|mut cfg| {
            apply_window_args(&mut cfg, &args.window);
            apply_train_args(&mut cfg, args)?;
            configure_threads(cfg.threads);
            cmd_train(&cfg)
        }),
        Command::Eval(args) => resolve(&args.shared).and_then(|mut cfg| {
            if let Some(a) = &args.averaging {
                cfg.averaging = Averaging::parse(a)?;
            }
            configure_threads(cfg.threads);
            let checkpoint = require_path(&args.checkpoint, "--checkpoint")?;
            cmd_eval(&cfg, &checkpoint, args.majority)
        }),
        Command::Predict(args) => resolve(&args.shared).and_then(|cfg| {
            configure_threads(cfg.threads);
            let checkpoint = require_path(&args.checkpoint, "--checkpoint")?;
            let file = require_path(&args.file, "--file")?;
            cmd_predict(&cfg, &checkpoint, &file)
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn apply_train_args(cfg: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(v) = args.split_ratio {
        cfg.split_ratio = v;
    }
    if let Some(v) = args.conv1_kernel {
        cfg.conv1_kernel = v;
    }
    if let Some(v) = args.conv1_channels {
        cfg.conv1_channels = v;
    }
    if let Some(v) = args.pool_window {
        cfg.pool_window = v;
    }
    if let Some(v) = args.pool_stride {
        cfg.pool_stride = v;
    }
    if let Some(v) = args.conv2_kernel {
        cfg.conv2_kernel = v;
    }
    if let Some(v) = args.conv2_channels {
        cfg.conv2_channels = v;
    }
    if let Some(v) = args.fc_units {
        cfg.fc_units = v;
    }
    if let Some(v) = args.l2_lambda {
        cfg.l2_lambda = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = &args.optimizer {
        cfg.optimizer = crate::optim::OptimizerKind::parse(v)?;
    }
    if let Some(v) = args.beta1 {
        cfg.beta1 = v;
    }
    if let Some(v) = args.beta2 {
        cfg.beta2 = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.early_stop_patience {
        cfg.early_stop_patience = Some(v);
    }
    if let Some(v) = args.early_stop_min_delta {
        cfg.early_stop_min_delta = v;
    }
    if let Some(v) = &args.averaging {
        cfg.averaging = Averaging::parse(v)?;
    }
    Ok(())
}
