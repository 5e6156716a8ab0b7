//! `ttslat`: plan, grid-search, sweep, simulate and fit from the command line.
//!
//! Every command writes its CSV or JSON outputs plus a `manifest.json` into
//! `--out`. `ttslat replay --manifest DIR/manifest.json` reruns a recorded
//! command with the same resolved parameters.
//!
//! Exit codes: 0 success, 1 input error, 2 internal invariant violation.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid input files, unwritable outputs.
    Input(String),
    /// A result broke an invariant the library promises.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<ttslat_core::Error> for CliError {
    fn from(e: ttslat_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ttslat", version, about = "Latency-aware test-time scaling planner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Greedy search over branches then draft length.
    Plan(PlanArgs),
    /// Exhaustive search over the given branch and draft-length sets.
    Grid(GridArgs),
    /// Accuracy-latency frontier plus sequential and parallel sweeps.
    Pareto(ParetoArgs),
    /// Monte Carlo simulation of one configuration.
    Simulate(SimulateArgs),
    /// Fit an efficiency curve to accuracy anchors.
    Fit(FitArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub common: Common,
    /// Wall-clock budget in seconds; defaults to the scenario budget.
    #[arg(long = "T", value_name = "SECONDS")]
    pub budget: Option<f64>,
    /// Largest branch count, a power of two.
    #[arg(long, default_value_t = 64)]
    pub b_max: u32,
    #[arg(long, default_value_t = 7)]
    pub gamma_max: u32,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "T", value_name = "SECONDS")]
    pub budget: Option<f64>,
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub b_set: Vec<u32>,
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
    pub gamma_set: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    #[command(flatten)]
    pub common: Common,
    /// Budgets to sweep, in seconds.
    #[arg(
        long = "T",
        value_name = "LIST",
        value_delimiter = ',',
        default_value = "5,10,15,20,30,45,60,90,120"
    )]
    pub budgets: Vec<f64>,
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub b_set: Vec<u32>,
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
    pub gamma_set: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "T", value_name = "SECONDS")]
    pub budget: Option<f64>,
    /// Branch count; defaults to the scenario's default config.
    #[arg(long)]
    pub branches: Option<u32>,
    /// Draft length; defaults to the scenario's default config.
    #[arg(long)]
    pub gamma: Option<u32>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the event timeline of trial 0 to `trace.csv`.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header `tokens,accuracy`.
    #[arg(long, value_name = "PATH")]
    pub anchors: PathBuf,
    /// Parameter box, e.g. `a_max=0:0.95`. Names: a_min, a_max, midpoint, slope.
    #[arg(long = "bound", value_name = "NAME=LO:HI", value_delimiter = ',')]
    pub bounds: Vec<String>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Where to write; defaults to the manifest's directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TTSLAT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("TTSLAT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = std::panic::catch_unwind(|| configure_threads().and_then(|()| commands::run(cli.command)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
        // the panic message is already on stderr
        Err(_) => ExitCode::from(2),
    }
}
