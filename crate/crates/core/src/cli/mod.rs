//! `fpkit` command-line front end.
//!
//! stdout carries data (JSON or CSV), stderr carries the resolved
//! configuration and diagnostics. Exit codes: 0 success, 2 bad input or
//! parameters, 3 numeric failure, 4 diverged training.

mod commands;

use crate::error::FpError;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "FPKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fpkit", version, about = "Confidence estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metrics report (JSON) for one or more confidence scores.
    Evaluate(EvaluateArgs),
    /// Risk-coverage curve (CSV `coverage,risk`) for one score.
    RcCurve(RcCurveArgs),
    /// Fits a softmax temperature on a holdout set (JSON).
    FitTemperature(FitTemperatureArgs),
    /// Calibration / grouping / aleatoric split of a proper scoring rule (JSON).
    Decompose(DecomposeArgs),
    /// Trains the built-in MLP on a synthetic dataset.
    Train(TrainArgs),
    /// Bayes reject rules on a Gaussian mixture (JSON summary or CSV sweep).
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Energy temperature.
    #[arg(long, default_value_t = 1.0)]
    pub energy_t: f64,
    /// ODIN temperature.
    #[arg(long, default_value_t = 1000.0)]
    pub odin_t: f64,
    /// ReAct clipping percentile of the pooled features, in (0, 100].
    #[arg(long, default_value_t = 90.0)]
    pub react_percentile: f64,
    /// Penultimate features CSV (`f0,...`), row-aligned with the logits.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Classifier head JSON `{"weights": [[...]], "bias": [...]}`.
    #[arg(long)]
    pub head: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Logits CSV `l0,...,l{K-1},label`.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Comma-separated score kinds, or `all` (ReAct only when features and
    /// head are given).
    #[arg(long, default_value = "msp")]
    pub scores: String,
    /// Report AURC and E-AURC multiplied by 1000.
    #[arg(long)]
    pub x1000: bool,
    /// ECE bins.
    #[arg(long, default_value_t = crate::metrics::DEFAULT_ECE_BINS)]
    pub bins: usize,
    /// OOD logits CSV; adds in-vs-out reports (labels are ignored).
    #[arg(long)]
    pub ood: Option<PathBuf>,
    /// Features of the OOD rows, for ReAct.
    #[arg(long)]
    pub ood_features: Option<PathBuf>,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(Debug, Args)]
pub struct RcCurveArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, default_value = "msp")]
    pub score_kind: String,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(Debug, Args)]
pub struct FitTemperatureArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Also write the temperature-scaled logits CSV here.
    #[arg(long)]
    pub output_logits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// `log_loss` or `brier`.
    #[arg(long, default_value = "log_loss")]
    pub rule: String,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_ECE_BINS)]
    pub bins: usize,
    /// Known posteriors CSV `q0,...,q{K-1}`, row-aligned with the logits.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// sgd, sam, swa or fmfp.
    #[arg(long, default_value = "sgd")]
    pub method: String,
    /// two_moons or gaussian_blobs.
    #[arg(long, default_value = "two_moons")]
    pub dataset: String,
    /// ce, focal[:γ], label_smoothing[:ε], l1_logit[:λ], logitnorm[:τ],
    /// ce_plus_oe[:λ], ce_plus_crl[:λ].
    #[arg(long, default_value = "ce")]
    pub loss: String,
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// SAM radius; defaults to 0.05 for sam/fmfp and 0 otherwise.
    #[arg(long)]
    pub sam_rho: Option<f64>,
    /// First averaging epoch (0-based); defaults to 3/4 of the epochs.
    #[arg(long)]
    pub swa_start: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub swa_cycle: usize,
    /// Keep the learning rate constant during averaging.
    #[arg(long)]
    pub constant_lr: bool,
    /// Hidden layer widths.
    #[arg(long, default_value = "32,32")]
    pub hidden: String,
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    /// Input noise; defaults to 0.2 for two_moons and 1.0 for gaussian_blobs.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    /// Ring outliers drawn for outlier exposure and the OOD evaluation set.
    #[arg(long, default_value_t = 500)]
    pub n_outliers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving model.json, eval.csv, features.csv, head.json,
    /// history.csv (and ood_eval.csv, ood_features.csv for gaussian_blobs).
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Mixture spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Emit the threshold sweep CSV instead of the JSON summary.
    #[arg(long)]
    pub sweep: bool,
    /// true_posterior_max, density_ratio or msp_of_model.
    #[arg(long, default_value = "true_posterior_max")]
    pub score: String,
    /// Threshold grid `lo:hi:n` or a comma-separated list; the default
    /// covers the score range and includes the Bayes threshold.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub n_mc: usize,
    /// Independent sample streams; results depend on this, not on threads.
    #[arg(long, default_value_t = 8)]
    pub shards: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Exit code for a library error.
pub fn exit_code(err: &FpError) -> i32 {
    match err {
        FpError::DivergedTraining { .. } => EXIT_DIVERGED,
        FpError::DegenerateLabels(_) => EXIT_NUMERIC,
        FpError::InvalidInput(_)
        | FpError::InvalidParam(_)
        | FpError::MissingModelAccess(_)
        | FpError::Parse { .. }
        | FpError::Io(_) => EXIT_INPUT,
    }
}

/// Worker threads: available parallelism capped by `FPKIT_THREADS`.
pub fn thread_budget() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => avail.min(cap),
        _ => avail,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Evaluate(a) => commands::evaluate_cmd(a, stdout, stderr),
        Command::RcCurve(a) => commands::rc_curve_cmd(a, stdout, stderr),
        Command::FitTemperature(a) => commands::fit_temperature_cmd(a, stdout, stderr),
        Command::Decompose(a) => commands::decompose_cmd(a, stdout, stderr),
        Command::Train(a) => commands::train_cmd(a, stdout, stderr),
        Command::Simulate(a) => commands::simulate_cmd(a, stdout, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
