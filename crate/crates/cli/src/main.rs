//! `latentgap`: reproduce the simulation studies, generate synthetic data,
//! and estimate latent-group effects from CSV datasets.

mod estimate;
mod experiments;
mod sample_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use latentgap::harness::with_thread_cap;

/// Seed used when neither `--seed` nor `LATENTGAP_SEED` is given.
pub const DEFAULT_SEED: u64 = 424_242;

#[derive(Parser)]
#[command(
    name = "latentgap",
    version,
    about = "Latent-group effect estimation from calibrated probability scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named simulation study and write its report files.
    Experiment {
        /// Which table or figure dataset to produce.
        #[arg(value_enum)]
        id: experiments::ExperimentId,
        /// Replications per cell (default: the full protocol's 2000).
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        /// Master seed; falls back to LATENTGAP_SEED, then a fixed default.
        #[arg(long, env = "LATENTGAP_SEED")]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        /// Report format (figures always emit CSV plot data).
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Cap on worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
        /// Integration points for reference values.
        #[arg(long, default_value_t = latentgap::theory::DEFAULT_MC_POINTS)]
        mc_points: usize,
    },
    /// Estimate the group effect on a CSV file with header y,p,x1,...,xd.
    Estimate {
        /// Input CSV path.
        input: PathBuf,
        /// Estimator to run (the oracle needs true nuisances and is
        /// unavailable on real data).
        #[arg(long, value_enum)]
        method: estimate::EstimatorArg,
        /// Cross-fitting folds (orthogonal estimator).
        #[arg(long, default_value_t = latentgap::nuisance::DEFAULT_FOLDS)]
        folds: usize,
        /// Ridge penalty for the nuisance fits.
        #[arg(long, default_value_t = latentgap::nuisance::DEFAULT_RIDGE_LAMBDA)]
        lambda: f64,
        /// Calibration-error magnitudes for the sensitivity band
        /// (repeatable).
        #[arg(long = "delta")]
        deltas: Vec<f64>,
        /// Interval level is 1 - alpha.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Seed for the fold assignment.
        #[arg(long, env = "LATENTGAP_SEED")]
        seed: Option<u64>,
    },
    /// Synthetic-data commands.
    Dgp {
        #[command(subcommand)]
        command: DgpCommand,
    },
}

#[derive(Subcommand)]
enum DgpCommand {
    /// Generate a synthetic dataset as CSV with a sidecar config JSON.
    Sample(sample_cmd::SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Experiment { id, reps, seed, out, format, threads, mc_points } => {
            let opts = experiments::ExperimentOpts {
                id,
                reps,
                master_seed: seed.unwrap_or(DEFAULT_SEED),
                out,
                format,
                mc_points,
            };
            let files = with_thread_cap(threads, || experiments::run_experiment(&opts))?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Estimate { input, method, folds, lambda, deltas, alpha, seed } => {
            estimate::run(&estimate::EstimateOpts {
                input,
                method,
                folds,
                lambda,
                deltas,
                alpha,
                seed: seed.unwrap_or(DEFAULT_SEED),
            })
        }
        Command::Dgp { command: DgpCommand::Sample(args) } => sample_cmd::run(&args),
    }
}

/// Exit codes: 2 input error, 3 non-identification, 4 internal numeric
/// failure.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<latentgap::Error>() {
            return match e {
                latentgap::Error::NotIdentified { .. } => 3,
                latentgap::Error::Validation(_) => 2,
                _ => 4,
            };
        }
        if cause.downcast_ref::<csv::Error>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
    }
    4
}

/// Tags an error as an input problem (exit code 2).
pub fn input_error(msg: String) -> anyhow::Error {
    anyhow::Error::new(latentgap::Error::Validation(msg))
}
