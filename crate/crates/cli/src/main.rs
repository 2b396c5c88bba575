//! `feeder`: synthesize datasets, plan days ahead, simulate closed-loop
//! tracking and summarize run artifacts.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use feeder_core::config::ConfigError;
use feeder_core::dayahead::DayAheadError;
use feeder_core::forecast::ForecastError;
use feeder_core::sim::SimError;

/// Environment variable holding the log filter (for example `info` or `feeder_core=debug`).
const LOG_ENV: &str = "FEEDER_LOG";

#[derive(Parser, Debug)]
#[command(name = "feeder", version, about = "Day-ahead dispatch and closed-loop tracking simulator")]
struct Cli {
    /// Run configuration (TOML). Flags given on the command line take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic historical dataset.
    Synth(SynthArgs),
    /// Forecast one day from the history and solve its dispatch plan.
    Plan(PlanArgs),
    /// Simulate one planned day, or a chain of days planned on the fly.
    Run(RunArgs),
    /// Recompute the tracking report of a stored step trace.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Output dataset file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    /// Zero-based index of the day to plan within the dataset; earlier days form the history. Defaults to the last day.
    #[arg(long)]
    pub target_day: Option<usize>,
    /// Output plan file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Cap on the planned GCP power, kW.
    #[arg(long)]
    pub p_max: Option<f64>,
    /// State of energy at the start of the day, kWh.
    #[arg(long)]
    pub soe0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    /// Plan file; selects a single-day run.
    #[arg(long, value_name = "FILE")]
    pub plan: Option<PathBuf>,
    /// Prosumption trace replayed in a single-day run.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Day of the dataset whose profile drives a single-day run without a trace file.
    #[arg(long)]
    pub target_day: Option<usize>,
    /// Number of chained days, taken from the end of the dataset.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub initial_soc: Option<f64>,
    /// Relative forecast bias of chained runs (0.05 = 5% high).
    #[arg(long)]
    pub forecast_bias: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    /// Also write the plot data files.
    #[arg(long)]
    pub emit_plots: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Step trace written by `run`.
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub plan: PathBuf,
    /// Also list slots whose average GCP power exceeds this cap.
    #[arg(long)]
    pub p_max: Option<f64>,
    /// Allowance above the cap, kW.
    #[arg(long, default_value_t = feeder_core::sim::PEAK_TOLERANCE_KW)]
    pub tolerance: f64,
}

/// Process exit status for a failed command.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<commands::UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<DayAheadError>() {
            return match e {
                DayAheadError::Infeasible { .. } => 3,
                DayAheadError::Solver { .. } | DayAheadError::Problem(_) | DayAheadError::SearchLimit(_) => 5,
                DayAheadError::Config(_) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::PlantAbort { .. } => 4,
                SimError::Mpc(_) => 5,
                SimError::Config(_) => 2,
                _ => 1,
            };
        }
        if let Some(ForecastError::TooFewDays(_) | ForecastError::InsufficientHistory { .. }) =
            cause.downcast_ref::<ForecastError>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = commands::load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Plan(a) => commands::plan(cfg, a),
        Command::Run(a) => commands::run(cfg, a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
