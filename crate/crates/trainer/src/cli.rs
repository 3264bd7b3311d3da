//! The `dcl` command line: gen-data | pretrain | train | eval | gradcheck.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nets::{load_pair, load_params, pair_to_params, save_pair, save_params, ModelParams, TeacherStudentPair};
use phantom::{generate_dataset, write_dataset, Split};
use tensorgrad::{Precision, Real};

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Result, TrainError};
use crate::eval::evaluate;
use crate::metrics::{save_metrics, MetricsReport, MetricsRow, Scores};
use crate::pipeline::{eval_params, run_stage1, run_stage2};
use crate::suite::{gradient_suite, SUITE_TOLERANCE};

pub const RUN_HEADER_FILE: &str = "run_header.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const ENCODER_CHECKPOINT: &str = "encoder.dcln";
pub const MODEL_CHECKPOINT: &str = "model.dcln";

#[derive(Debug, Parser)]
#[command(name = "dcl", version, about = "Two-stage dual contrastive training on synthetic organ phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `key = value` config file; defaults apply to every key it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a phantom dataset into `data_dir`.
    GenData(RunArgs),
    /// Stage I: global contrastive pretraining; writes encoder.dcln.
    Pretrain(RunArgs),
    /// Stage II: mean-teacher training from `pretrained` (or from scratch); writes model.dcln.
    Train(RunArgs),
    /// Score a Stage II checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn load_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) if !path.is_file() => return Err(TrainError::MissingFile(path.clone())),
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TrainError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))
}

/// Reproducibility header: config hash, seed, precision and the full config.
pub fn run_header(cfg: &TrainConfig, command: &str) -> String {
    format!(
        "command = {command}\nversion = {}\nconfig_sha256 = {}\nseed = {}\nprecision = {}\n\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.seed,
        cfg.precision,
        cfg.to_text()
    )
}

fn write_outputs(cfg: &TrainConfig, dir: &Path, command: &str, metrics_file: &str, report: &MetricsReport) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join(RUN_HEADER_FILE), &run_header(cfg, command))?;
    save_metrics(report, &dir.join(metrics_file))?;
    let timing: String = report.wall_clock.iter().map(|(k, v)| format!("{k} = {v:.3}\n")).collect();
    write(&dir.join(TIMING_FILE), &timing)
}

fn print_scores(label: &str, s: &Scores) {
    let per_class: Vec<String> = s.dice.iter().map(|d| format!("{d:.4}")).collect();
    println!(
        "{label}: dice {:.4}  jaccard {:.4}  per-class dice [{}]",
        s.dice_mean,
        s.ji_mean,
        per_class.join(", ")
    );
}

fn gen_data(cfg: &TrainConfig) -> Result<()> {
    let dir = cfg
        .data_dir
        .clone()
        .ok_or_else(|| TrainError::Invalid("gen-data needs data_dir".into()))?;
    let records = generate_dataset(&cfg.dataset_spec())?;
    create_dir(&dir)?;
    write_dataset(&dir, &records)?;
    write(&dir.join(RUN_HEADER_FILE), &run_header(cfg, "gen-data"))?;
    println!("wrote {} slices to {}", records.len(), dir.display());
    Ok(())
}

fn pretrain<T: Real>(cfg: &TrainConfig) -> Result<()> {
    let data = Dataset::from_config(cfg)?;
    let (outcome, report) = run_stage1::<T>(cfg, &data)?;
    write_outputs(cfg, &cfg.out_dir, "pretrain", "metrics_stage1.csv", &report)?;
    save_params(&cfg.out_dir.join(ENCODER_CHECKPOINT), &outcome.params.cast())?;
    if let (Some(first), Some(last)) = (outcome.epoch_losses.first(), outcome.epoch_losses.last()) {
        println!("stage I gcl loss: epoch 1 {first:.4}, epoch {} {last:.4}", outcome.epoch_losses.len());
    }
    Ok(())
}

fn load_pretrained(cfg: &TrainConfig) -> Result<Option<ModelParams<f32>>> {
    match &cfg.pretrained {
        None => Ok(None),
        Some(p) if !p.is_file() => Err(TrainError::MissingFile(p.clone())),
        Some(p) => Ok(Some(load_params(p)?)),
    }
}

fn train<T: Real>(cfg: &TrainConfig) -> Result<()> {
    let pretrained = load_pretrained(cfg)?;
    let data = Dataset::from_config(cfg)?;
    let outcome = run_stage2::<T>(cfg, &data, pretrained.as_ref())?;
    write_outputs(cfg, &cfg.out_dir, "train", "metrics.csv", &outcome.report)?;
    let pair = TeacherStudentPair::new(outcome.pair.student.cast(), outcome.pair.teacher.cast(), outcome.pair.alpha())?;
    save_pair(&cfg.out_dir.join(MODEL_CHECKPOINT), &pair)?;
    print_scores("test", &outcome.test);
    Ok(())
}

fn eval<T: Real>(cfg: &TrainConfig, checkpoint: &Path) -> Result<()> {
    if !checkpoint.is_file() {
        return Err(TrainError::MissingFile(checkpoint.to_owned()));
    }
    let stored = load_pair(checkpoint)?;
    nets::pair_from_params(&pair_to_params(&stored))?;
    let pair = TeacherStudentPair::<T>::new(stored.student.cast(), stored.teacher.cast(), stored.alpha())?;
    let data = Dataset::from_config(cfg)?;
    let scores = evaluate(eval_params(cfg, &pair), &data, Split::Test, cfg.organs)?;
    let mut report = MetricsReport::new(cfg.organs);
    report.rows.push(MetricsRow {
        epoch: 0,
        split: "test".into(),
        scores: Some(scores.clone()),
        ..Default::default()
    });
    write_outputs(cfg, &cfg.out_dir, "eval", "metrics_eval.csv", &report)?;
    print_scores("test", &scores);
    Ok(())
}

fn gradcheck() -> Result<bool> {
    let mut ok = true;
    for r in gradient_suite()? {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{status} {:<24} max rel err {:.3e} (tol {SUITE_TOLERANCE:e})", r.name, r.max_error());
        ok &= r.passed();
    }
    Ok(ok)
}

fn dispatch(cfg: &TrainConfig, single: fn(&TrainConfig) -> Result<()>, double: fn(&TrainConfig) -> Result<()>) -> Result<()> {
    match cfg.precision {
        Precision::Single => single(cfg),
        Precision::Double => double(cfg),
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the exit status.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Gradcheck => match gradcheck() {
            Ok(true) => Ok(()),
            Ok(false) => return 3,
            Err(e) => Err(e.into()),
        },
        Command::GenData(a) => load_config(&a).and_then(|c| gen_data(&c)),
        Command::Pretrain(a) => load_config(&a).and_then(|c| dispatch(&c, pretrain::<f32>, pretrain::<f64>)),
        Command::Train(a) => load_config(&a).and_then(|c| dispatch(&c, train::<f32>, train::<f64>)),
        Command::Eval { checkpoint, run } => load_config(&run).and_then(|c| match c.precision {
            Precision::Single => eval::<f32>(&c, &checkpoint),
            Precision::Double => eval::<f64>(&c, &checkpoint),
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
