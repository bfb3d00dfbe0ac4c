//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or parse error,
//! 3 training divergence, 4 artifact mismatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lstmfcn_core::data::{generate_cbf, Dataset, Split};
use lstmfcn_core::gradcheck::{check_model, ModelCheckOptions};
use lstmfcn_core::model::{build, ModelConfig, ModelParams, Variant};
use lstmfcn_core::optim::{FineTuneSchedule, FINAL_LR, INITIAL_LR, PLATEAU_PATIENCE};
use lstmfcn_core::stats::compare_models;
use lstmfcn_core::train::{attention_weights, evaluate, finetune_phase2, train_phase1, EpochRecord, TrainConfig, TrainObserver};
use lstmfcn_core::{seeded_rng, Error as CoreError};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::history::write_history;
use crate::manifest::ManifestBuilder;
use crate::results::{read_results, render_report};
use crate::ucr::{load_pair, load_ucr, save_ucr};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;
pub const OUT_DIR_ENV: &str = "LSTMFCN_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "lstmfcn-out";

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";
pub const RESUME_FILE: &str = "finetune_resume.ckpt";
pub const FINETUNE_HISTORY_FILE: &str = "finetune_history.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const ATTENTION_FILE: &str = "attention.csv";

#[derive(Debug, Parser)]
#[command(name = "lstmfcn", version, about = "LSTM-FCN and ALSTM-FCN time series classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from scratch (phase one).
    Train(TrainArgs),
    /// Fine-tune a trained checkpoint with a halving schedule (phase two).
    Finetune(FinetuneArgs),
    /// Classify a dataset and write per-sample predictions.
    Evaluate(EvaluateArgs),
    /// Export per-sample attention weights of an ALSTM-FCN model.
    Attention(AttentionArgs),
    /// Compare models over a result matrix.
    Compare(CompareArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic Cylinder-Bell-Funnel train/test pair.
    GenerateCbf(GenerateCbfArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    LstmFcn,
    AlstmFcn,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::LstmFcn => Variant::LstmFcn,
            VariantArg::AlstmFcn => Variant::AlstmFcn,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutDir {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataPair {
    /// Training split in UCR format.
    #[arg(long)]
    pub data_train: PathBuf,
    /// Test split in UCR format.
    #[arg(long)]
    pub data_test: PathBuf,
    /// Monitor a stratified holdout of this fraction of the training split
    /// instead of the test split.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataPair,
    #[arg(long, value_enum, default_value = "lstm-fcn")]
    pub variant: VariantArg,
    /// LSTM cells M.
    #[arg(long, default_value_t = 8)]
    pub cells: usize,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = INITIAL_LR)]
    pub lr: f64,
    /// Disable class-frequency loss weighting.
    #[arg(long)]
    pub no_class_weights: bool,
    /// Suppress per-epoch progress on standard error.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneArgs {
    /// Checkpoint to start from. A resume checkpoint continues its stored
    /// schedule unless `--k` is given.
    #[arg(long)]
    pub from: PathBuf,
    #[command(flatten)]
    pub data: DataPair,
    /// Fine-tuning repetitions K (default 5).
    #[arg(long)]
    pub k: Option<usize>,
    /// Epochs per repetition.
    #[arg(long, default_value_t = 2000)]
    pub finetune_epochs: usize,
    /// Learning rate of the first repetition.
    #[arg(long, default_value_t = INITIAL_LR)]
    pub lr: f64,
    /// Batch size of the first repetition.
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub no_class_weights: bool,
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset in UCR format.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttentionArgs {
    /// ALSTM-FCN checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// Result matrix: `dataset,classes,<model>...` rows.
    #[arg(long)]
    pub results: PathBuf,
    /// Model to count wins and ties against.
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "lstm-fcn")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 8)]
    pub cells: usize,
    #[arg(long, default_value_t = 16)]
    pub length: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// First seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Perturb one analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateCbfArgs {
    /// Training series per class.
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    /// Test series per class.
    #[arg(long, default_value_t = 300)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 128)]
    pub length: usize,
    /// Seed of the training split; the test split uses `seed + 1`.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } | Error::UnknownLabel { .. } => EXIT_USAGE,
        Error::Checkpoint { .. } | Error::Mismatch(_) => EXIT_MISMATCH,
        Error::Core(CoreError::Diverged { .. }) => EXIT_DIVERGED,
        Error::Core(CoreError::Config(_) | CoreError::ScheduleExhausted(_)) => EXIT_USAGE,
        Error::Core(CoreError::Dimension { .. } | CoreError::Index { .. } | CoreError::UnknownLabel(_)) => EXIT_MISMATCH,
        Error::Core(_) => EXIT_CHECK_FAILED,
    }
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => train(&a),
        Command::Finetune(a) => finetune(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Attention(a) => attention(&a),
        Command::Compare(a) => compare(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::GenerateCbf(a) => generate(&a),
    }
}

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Training data and the split whose accuracy is monitored.
fn load_data(d: &DataPair, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = load_pair(&d.data_train, &d.data_test)?;
    match d.val_fraction {
        None => Ok((train, test)),
        Some(f) => {
            let (kept, held) = train.holdout_split(f, seed)?;
            Ok((kept, held.with_split(Split::Test)))
        }
    }
}

struct Progress {
    quiet: bool,
}

impl TrainObserver for Progress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        if !self.quiet {
            eprintln!("epoch {} loss {:.6} val_accuracy {:.4} lr {:.4e} batch {}", r.epoch, r.train_loss, r.val_accuracy, r.lr, r.batch_size);
        }
    }
}

fn train(a: &TrainArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::start("train", snapshot(a), Some(a.seed));
    let (train, monitor) = load_data(&a.data, a.seed)?;
    manifest.input(&a.data.data_train);
    manifest.input(&a.data.data_test);
    let config = ModelConfig::new(a.variant.into(), train.series_length(), train.class_count(), a.cells);
    config.validate()?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        learning_rate: a.lr,
        class_weighting: !a.no_class_weights,
        ..TrainConfig::default()
    };
    let params = build(&config, &mut seeded_rng(a.seed))?;
    let out = train_phase1(params, &config, &train, &monitor, &tc, &mut Progress { quiet: a.quiet })?;

    let dir = &a.out.out_dir;
    create_dir(dir)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(config, train.label_values().to_vec(), out.params).save(&ckpt_path)?;
    let history_path = dir.join(HISTORY_FILE);
    write_history(&history_path, &out.history)?;
    manifest.output(&ckpt_path);
    manifest.output(&history_path);
    manifest.finish(dir)?;
    match (out.best_val_accuracy, out.best_epoch) {
        (Some(acc), Some(epoch)) => println!("best val_accuracy {acc:.4} at epoch {epoch}"),
        _ => println!("no epochs run"),
    }
    Ok(EXIT_OK)
}

/// Checks that `data` fits the model stored in `ckpt` (read from `path`).
fn check_fit(ckpt: &Checkpoint, path: &Path, data: &Dataset, data_path: &Path) -> Result<()> {
    let config = ckpt.config();
    if data.series_length() != config.series_length {
        return Err(Error::Mismatch(format!(
            "{} holds series of length {}, but {} was trained on length {}",
            data_path.display(),
            data.series_length(),
            path.display(),
            config.series_length
        )));
    }
    Ok(())
}

/// Loads a dataset through the checkpoint's label map; unseen labels are a
/// mismatch between the artifacts.
fn load_for_model(ckpt: &Checkpoint, path: &Path, data_path: &Path, split: Split) -> Result<Dataset> {
    let data = load_ucr(data_path, split, Some(&ckpt.header.label_values)).map_err(|e| match e {
        Error::UnknownLabel { path: p, line, label } => Error::Mismatch(format!(
            "{}:{line}: label {label} is not one of the classes of {}",
            p.display(),
            path.display()
        )),
        other => other,
    })?;
    check_fit(ckpt, path, &data, data_path)?;
    Ok(data)
}

struct FinetuneProgress<'a> {
    quiet: bool,
    resume: Checkpoint,
    resume_path: &'a Path,
    error: Option<Error>,
}

impl TrainObserver for FinetuneProgress<'_> {
    fn on_epoch(&mut self, r: &EpochRecord) {
        if !self.quiet {
            eprintln!("epoch {} loss {:.6} val_accuracy {:.4} lr {:.4e} batch {}", r.epoch, r.train_loss, r.val_accuracy, r.lr, r.batch_size);
        }
    }

    fn on_iteration_start(&mut self, iteration: usize, lr: f64, batch_size: usize) {
        println!("iteration {iteration} lr {lr:e} batch {batch_size}");
    }

    fn on_iteration_end(&mut self, schedule: &FineTuneSchedule, params: &ModelParams) {
        if self.error.is_some() {
            return;
        }
        self.resume.params = params.clone();
        self.resume.header.schedule = Some(schedule.clone()).filter(|s| !s.is_exhausted());
        if let Err(e) = self.resume.save(self.resume_path) {
            self.error = Some(e);
        }
    }
}

fn finetune(a: &FinetuneArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::start("finetune", snapshot(a), Some(a.seed));
    let ckpt = Checkpoint::load(&a.from)?;
    manifest.input(&a.from);
    let (train, monitor) = load_data(&a.data, a.seed)?;
    manifest.input(&a.data.data_train);
    manifest.input(&a.data.data_test);
    if train.label_values() != ckpt.header.label_values.as_slice() {
        return Err(Error::Mismatch(format!(
            "{} has labels {:?}, but {} was trained on {:?}",
            a.data.data_train.display(),
            train.label_values(),
            a.from.display(),
            ckpt.header.label_values
        )));
    }
    check_fit(&ckpt, &a.from, &train, &a.data.data_train)?;
    let schedule = match (a.k, &ckpt.header.schedule) {
        (None, Some(stored)) => stored.clone(),
        (k, _) => FineTuneSchedule::new(k.unwrap_or(5), a.lr, a.batch),
    };
    let tc = TrainConfig {
        epochs: a.finetune_epochs,
        batch_size: schedule.batch_size,
        seed: a.seed,
        learning_rate: schedule.lr,
        min_learning_rate: FINAL_LR,
        plateau_patience: PLATEAU_PATIENCE,
        class_weighting: !a.no_class_weights,
        finetune_iterations: schedule.iterations,
        finetune_epochs: Some(a.finetune_epochs),
    };

    let dir = &a.out.out_dir;
    create_dir(dir)?;
    let resume_path = dir.join(RESUME_FILE);
    let mut progress = FinetuneProgress { quiet: a.quiet, resume: ckpt.clone(), resume_path: &resume_path, error: None };
    let out = finetune_phase2(ckpt.params.clone(), ckpt.config(), &train, &monitor, &tc, schedule, &mut progress)?;
    if let Some(e) = progress.error {
        return Err(e);
    }

    let mut result = ckpt;
    result.params = out.params;
    result.header.schedule = None;
    let out_path = dir.join(FINETUNED_FILE);
    result.save(&out_path)?;
    let history_path = dir.join(FINETUNE_HISTORY_FILE);
    write_history(&history_path, &out.history)?;
    manifest.output(&out_path);
    manifest.output(&history_path);
    if !out.iterations.is_empty() {
        manifest.output(&resume_path);
    }
    manifest.finish(dir)?;
    println!("initial val_accuracy {:.4}", out.initial_val_accuracy);
    println!("best val_accuracy {:.4}", out.best_val_accuracy);
    Ok(EXIT_OK)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::start("evaluate", snapshot(a), None);
    let ckpt = Checkpoint::load(&a.model)?;
    let data = load_for_model(&ckpt, &a.model, &a.data, Split::Test)?;
    manifest.input(&a.model);
    manifest.input(&a.data);
    let e = evaluate(&ckpt.params, ckpt.config(), &data)?;

    let dir = &a.out.out_dir;
    create_dir(dir)?;
    let path = dir.join(PREDICTIONS_FILE);
    let mut text = String::from("index,true,predicted\n");
    for (i, &p) in e.predictions.iter().enumerate() {
        text.push_str(&format!("{i},{},{}\n", data.raw_label(i), data.label_values()[p]));
    }
    fs::write(&path, text).map_err(|err| Error::io(&path, err))?;
    manifest.output(&path);
    manifest.finish(dir)?;
    println!("accuracy {:.4}", e.accuracy);
    Ok(EXIT_OK)
}

fn attention(a: &AttentionArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::start("attention", snapshot(a), None);
    let ckpt = Checkpoint::load(&a.model)?;
    if ckpt.config().variant != Variant::AlstmFcn {
        return Err(Error::Mismatch(format!("{}: no attention weights in this variant ({})", a.model.display(), ckpt.config().variant.name())));
    }
    let data = load_for_model(&ckpt, &a.model, &a.data, Split::Test)?;
    manifest.input(&a.model);
    manifest.input(&a.data);
    let weights = attention_weights(&ckpt.params, ckpt.config(), &data)?;

    let dir = &a.out.out_dir;
    create_dir(dir)?;
    let path = dir.join(ATTENTION_FILE);
    let mut text = String::from("index,true");
    for t in 0..data.series_length() {
        text.push_str(&format!(",alpha_{t}"));
    }
    text.push('\n');
    for (i, row) in weights.iter().enumerate() {
        text.push_str(&format!("{i},{}", data.raw_label(i)));
        for w in row {
            text.push_str(&format!(",{w}"));
        }
        text.push('\n');
    }
    fs::write(&path, text).map_err(|err| Error::io(&path, err))?;
    manifest.output(&path);
    manifest.finish(dir)?;
    println!("wrote {} rows of {} weights to {}", weights.len(), data.series_length(), path.display());
    Ok(EXIT_OK)
}

fn compare(a: &CompareArgs) -> Result<i32> {
    let matrix = read_results(&a.results)?;
    let report = compare_models(&matrix, a.baseline.as_deref())?;
    print!("{}", render_report(&report, matrix.datasets.len()));
    Ok(EXIT_OK)
}

fn gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let config = ModelConfig::new(a.variant.into(), a.length, a.classes, a.cells);
    config.validate()?;
    let options = ModelCheckOptions { corrupt: a.corrupt, ..ModelCheckOptions::default() };
    let mut worst = 0.0f64;
    let mut out = std::io::stdout().lock();
    for seed in a.seed..a.seed + a.seeds.max(1) {
        let r = check_model(&config, seed, &options)?;
        let _ = writeln!(
            out,
            "seed {seed} max relative error {:.3e} in {} ({} coordinates checked)",
            r.report.max_relative_error, r.worst_tensor, r.report.checked
        );
        worst = worst.max(r.report.max_relative_error);
    }
    let pass = worst < a.tolerance;
    let _ = writeln!(out, "max relative error {worst:.3e} {}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn generate(a: &GenerateCbfArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::start("generate-cbf", snapshot(a), Some(a.seed));
    let train = generate_cbf(a.train_per_class, a.length, a.seed)?;
    let test = generate_cbf(a.test_per_class, a.length, a.seed.wrapping_add(1))?;
    let dir = &a.out.out_dir;
    create_dir(dir)?;
    for (data, name) in [(&train, "CBF_TRAIN.tsv"), (&test, "CBF_TEST.tsv")] {
        let path = dir.join(name);
        save_ucr(&path, data, b'\t')?;
        manifest.output(&path);
    }
    manifest.finish(dir)?;
    println!("wrote {} training and {} test series to {}", train.len(), test.len(), dir.display());
    Ok(EXIT_OK)
}
