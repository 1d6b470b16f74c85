//! `gal` — train a small classifier on real plus generated data while
//! estimating, online, whether each batch of generated samples helps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gal_harness::commands::{
    cmd_ablate, cmd_distribution, cmd_report_dataset, cmd_report_runs, cmd_train, AblateAxis,
    CommonArgs, TrainInputs, TrainMode,
};

#[derive(Parser)]
#[command(name = "gal", version, about = "Streaming selection of generated training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainModeArg {
    /// Streaming selection: score and gate each generated batch
    Bsgal,
    /// Train on all generated data unconditionally
    Baseline,
    /// Accept generated batches with a fixed coin flip
    RandomDropout,
    /// Filter a finite candidate pool against a frozen model, then train
    Offline,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateAxisArg {
    Beta,
    Tau,
    Sampling,
    Normalize,
    Estimator,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override a config key: --set run.iterations=500 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output root (defaults to config out_dir, then $GAL_OUT_DIR, then ./runs)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override run.seed
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn into_args(self) -> CommonArgs {
        CommonArgs { config: self.config, overrides: self.set, out: self.out, seed: self.seed }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one training loop and write run.jsonl, summary.json, params.galp
    Train {
        /// Which runner to use
        #[arg(value_enum)]
        mode: TrainModeArg,
        #[command(flatten)]
        common: Common,
        /// Pretrained parameter file (offline mode)
        #[arg(long)]
        params: Option<PathBuf>,
        /// Dropout acceptance probability (random-dropout mode)
        #[arg(long)]
        rate: Option<f64>,
        /// Copy the acceptance rate from a finished run's summary.json
        #[arg(long = "rate-from")]
        rate_from: Option<PathBuf>,
    },
    /// Score generated samples per noise tier against a frozen model
    Distribution {
        #[command(flatten)]
        common: Common,
        /// Pretrained parameter file from a real-only train run
        #[arg(long)]
        params: PathBuf,
        /// Scores per noise tier
        #[arg(long = "samples-per-tier", default_value_t = 1000)]
        samples_per_tier: usize,
    },
    /// Train once per (axis value, seed) and write a comparison CSV
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Which knob to sweep
        #[arg(long, value_enum)]
        axis: AblateAxisArg,
        /// Comma-separated axis values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds per value (run.seed, run.seed+1, ...)
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Summarize finished runs or export datasets
    Report {
        #[command(subcommand)]
        what: ReportCommand,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Print (and optionally export) a table of run summaries
    Runs {
        /// summary.json files
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Optional CSV destination
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the configured world's datasets as CSV
    Dataset {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), gal_harness::HarnessError> {
    match cli.command {
        Command::Train { mode, common, params, rate, rate_from } => {
            let mode = match mode {
                TrainModeArg::Bsgal => TrainMode::Bsgal,
                TrainModeArg::Baseline => TrainMode::Baseline,
                TrainModeArg::RandomDropout => TrainMode::RandomDropout,
                TrainModeArg::Offline => TrainMode::Offline,
            };
            cmd_train(mode, &common.into_args(), &TrainInputs { params, rate, rate_from })?;
        }
        Command::Distribution { common, params, samples_per_tier } => {
            cmd_distribution(&common.into_args(), &params, samples_per_tier)?;
        }
        Command::Ablate { common, axis, values, seeds } => {
            let axis = match axis {
                AblateAxisArg::Beta => AblateAxis::Beta,
                AblateAxisArg::Tau => AblateAxis::Tau,
                AblateAxisArg::Sampling => AblateAxis::Sampling,
                AblateAxisArg::Normalize => AblateAxis::Normalize,
                AblateAxisArg::Estimator => AblateAxis::Estimator,
            };
            cmd_ablate(axis, &values, seeds, &common.into_args())?;
        }
        Command::Report { what } => match what {
            ReportCommand::Runs { summaries, out } => {
                cmd_report_runs(&summaries, out.as_deref())?;
            }
            ReportCommand::Dataset { common } => {
                cmd_report_dataset(&common.into_args())?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
