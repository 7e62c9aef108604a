//! Command-line driver: simulation, fitting, prediction, scoring, scans,
//! alignment, and the benchmark grid.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Every randomized subcommand takes an explicit `--seed`; there is no
//! wall-clock default. The worker count comes from `--jobs`, falling back to
//! the `TEBFAR_JOBS` environment variable.

mod commands;
mod errors;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use errors::CliError;

#[derive(Parser)]
#[command(
    name = "tebfar",
    version,
    about = "Joint Gaussian factor regression with a cross-validated response variance",
    long_about = "Fits joint Gaussian factor models whose response residual variance is \
either sampled (jbfm) or pinned to a value selected by K-fold cross-validated predictive \
error (tebfar). Includes scenario simulators, reference regressors, KL-optimal \
approximation scans, loadings alignment, and a benchmark driver. Randomized subcommands \
require an explicit --seed so published runs can be cited."
)]
struct Cli {
    /// Worker threads for parallel sections (default: TEBFAR_JOBS or all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario data: train.csv, test.csv, and truth.json
    Simulate(SimulateArgs),
    /// Fit a factor-model chain and write the draws manifest
    Fit(FitArgs),
    /// Predict responses for new data from a fitted model directory
    Predict(PredictArgs),
    /// Mean squared error between predictions and actual values
    EvalMse(EvalMseArgs),
    /// Scan pinned response variances for the KL-closest low-rank model
    KlScan(KlScanArgs),
    /// Align posterior loadings draws and summarize them
    Align(AlignArgs),
    /// Run a method x training-size x seed benchmark grid
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario id: 1, 2, 3, or motivating
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub ntrain: usize,
    #[arg(long)]
    pub ntest: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Training data CSV with a header row
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column
    #[arg(long)]
    pub outcome: String,
    /// Pin the response residual variance at this value (tebfar mode)
    #[arg(long)]
    pub sigma_y2: Option<f64>,
    /// Select the pinned variance by K-fold cross-validation (tebfar mode)
    #[arg(long)]
    pub cv: Option<usize>,
    /// Selection grid LO:HI:N (default 0.01:1:100)
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 2500)]
    pub burnin: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    /// Truncation level (default min(p+1, floor(5 + 2 ln(p+1))))
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// tebfar (pinned response variance) or jbfm (sampled)
    #[arg(long, default_value = "tebfar")]
    pub mode: String,
    /// Chain length for CV grid cells
    #[arg(long, default_value_t = 2000)]
    pub cv_iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub cv_burnin: usize,
    #[arg(long, default_value_t = 5)]
    pub cv_thin: usize,
    /// Drop rows with missing or unparseable cells instead of failing
    #[arg(long)]
    pub drop_incomplete: bool,
    /// Output directory for manifest.json, draws.csv, and cv_curve.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Fitted model directory (as written by fit)
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's predictor columns
    #[arg(long)]
    pub data: PathBuf,
    /// Output predictions CSV (row_index, y_hat) on the original scale
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalMseArgs {
    /// Predictions CSV (row_index, y_hat)
    #[arg(long)]
    pub predictions: PathBuf,
    /// Actual values: another predictions CSV, or a data CSV with --outcome
    #[arg(long)]
    pub actual: PathBuf,
    /// Response column name when --actual is a data CSV
    #[arg(long)]
    pub outcome: Option<String>,
    /// Optional output CSV with the single mse value
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct KlScanArgs {
    /// Grid of pinned response variances LO:HI:N
    #[arg(long, default_value = "0.005:1.2:240")]
    pub grid: String,
    /// Rank of the fitted approximation
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Random restarts per grid point
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long)]
    pub seed: u64,
    /// Truth model JSON (default: the built-in ten-variable two-factor model)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AlignArgs {
    /// Fitted model directory (as written by fit)
    #[arg(long)]
    pub model: PathBuf,
    /// Reference model JSON; default is the varimax rotation of the last draw
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output CSV of aligned means and interval bounds
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Scenario id: 1, 2, 3, or motivating
    #[arg(long)]
    pub scenario: String,
    /// Comma-separated methods: tebfar-cv, jbfm, lasso-cv, ridge-cv, ols
    #[arg(long, default_value = "tebfar-cv,jbfm,lasso-cv,ridge-cv,ols")]
    pub methods: String,
    /// Comma-separated training sizes
    #[arg(long)]
    pub ntrain: String,
    #[arg(long)]
    pub ntest: usize,
    /// Number of replicates (replicate indices 0..seeds)
    #[arg(long)]
    pub seeds: u64,
    #[arg(long)]
    pub seed: u64,
    /// Selection grid LO:HI:N for tebfar-cv (default 0.01:1:100)
    #[arg(long)]
    pub grid: Option<String>,
    /// CV folds for tuned methods
    #[arg(long, default_value_t = 10)]
    pub cv: usize,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 2500)]
    pub burnin: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    #[arg(long, default_value_t = 2000)]
    pub cv_iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub cv_burnin: usize,
    #[arg(long, default_value_t = 5)]
    pub cv_thin: usize,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Output directory for results.csv and summary.csv
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    let requested = match jobs {
        Some(j) => Some(j),
        None => match std::env::var("TEBFAR_JOBS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                CliError::Usage(format!("TEBFAR_JOBS must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = requested {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("could not size the worker pool: {e}")))?;
        #[cfg(not(feature = "parallel"))]
        if n > 1 {
            eprintln!("note: built without the parallel feature; --jobs ignored");
        }
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(CliError::Clap)?;
    configure_jobs(cli.jobs)?;
    match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Fit(args) => commands::fit(args),
        Command::Predict(args) => commands::predict(args),
        Command::EvalMse(args) => commands::eval_mse(args),
        Command::KlScan(args) => commands::kl_scan(args),
        Command::Align(args) => commands::align(args),
        Command::Bench(args) => commands::bench(args),
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(CliError::Clap(e)) => {
            // Keep clap's rendering (help/version print normally) but map
            // usage failures to exit code 1.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
