//! Command-line driver for hedging experiments.
//!
//! Usage:
//!   hedgesim convergence --config run.json --out results.csv
//!   hedgesim frontier --config frontier.json --format json --threads 4
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when a numerical
//! routine aborts, 1 on I/O failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use discrete_hedging::harness::{
    emit, riccati_check, run_convergence, run_frontier, run_sharpe_sweep, simulate, HarnessError,
    LoadedConfig, OutputFormat, ResultTable,
};

#[derive(Parser)]
#[command(name = "hedgesim", about = "Monte Carlo experiments on discretely rebalanced delta hedges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-path hedging errors of the configured rule.
    Simulate(Args),
    /// Moments of the renormalized error against their limits, per scale.
    Convergence(Args),
    /// Modified Sharpe ratio of the tilted rule over a grid of tilts.
    SharpeSweep(Args),
    /// Expectation-optimal rule against the efficient frontier.
    Frontier(Args),
    /// Closed-form Riccati solution against numerical integration.
    RiccatiCheck(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; the configuration's path or stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

type Experiment = fn(&LoadedConfig) -> Result<ResultTable, HarnessError>;

fn run(command: &Command) -> Result<(), HarnessError> {
    let (args, experiment): (&Args, Experiment) = match command {
        Command::Simulate(a) => (a, simulate),
        Command::Convergence(a) => (a, run_convergence),
        Command::SharpeSweep(a) => (a, run_sharpe_sweep),
        Command::Frontier(a) => (a, run_frontier),
        Command::RiccatiCheck(a) => (a, riccati_check),
    };
    let mut cfg = LoadedConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let format = args.format.map_or(cfg.config.output.format, OutputFormat::from);
    let out = args.out.clone().or_else(|| cfg.config.output.path.as_ref().map(PathBuf::from));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let table = pool.install(|| experiment(&cfg))?;
    emit(&table, format, out.as_deref())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hedgesim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
