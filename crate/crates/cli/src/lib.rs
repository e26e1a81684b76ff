//! Command-line driver: simulation, fitting, Monte Carlo tables and
//! backtests, configured by a JSON file.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

use commands::OutputSpec;

#[derive(Debug, Parser)]
#[command(name = "dynqr", version, about = "Penalised dynamic quantile estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate Monte Carlo datasets.
    Simulate(CommonArgs),
    /// Fit the model to a CSV series.
    Fit(DataArgs),
    /// Run the simulate-fit-score study and write bias and crossing tables.
    Montecarlo(CommonArgs),
    /// Expanding-window one-step-ahead forecast evaluation.
    Backtest(DataArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CSV; overrides the path in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

struct Resolved {
    config: RunConfig,
    seed: u64,
    out: OutputSpec,
}

fn resolve(args: &CommonArgs) -> Result<Resolved, CliError> {
    let config = RunConfig::from_path(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let out = OutputSpec {
        dir: args.out.clone().unwrap_or_else(|| config.out_dir.clone()),
        emit_plots: config.emit_plots,
    };
    Ok(Resolved { config, seed, out })
}

fn missing(block: &str) -> CliError {
    CliError::Config(format!("config has no `{block}` block"))
}

fn data_path(flag: &Option<PathBuf>, configured: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage("no input data: pass --data or set `data` in the config".into()))
}

/// Execute a parsed command and return the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Simulate(args) => {
            let r = resolve(args)?;
            let cfg = r.config.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
            commands::simulate(cfg, r.seed, &r.out)
        }
        Command::Fit(args) => {
            let r = resolve(&args.common)?;
            let cfg = r.config.fit.as_ref().ok_or_else(|| missing("fit"))?;
            let data = csvio::read_series(&data_path(&args.data, &cfg.data)?)?;
            commands::fit_command(cfg, &data, r.seed, &r.out)
        }
        Command::Montecarlo(args) => {
            let r = resolve(args)?;
            let cfg = r.config.montecarlo.as_ref().ok_or_else(|| missing("montecarlo"))?;
            commands::montecarlo(cfg, r.seed, &r.out)
        }
        Command::Backtest(args) => {
            let r = resolve(&args.common)?;
            let cfg = r.config.backtest.as_ref().ok_or_else(|| missing("backtest"))?;
            let data = csvio::read_series(&data_path(&args.data, &cfg.data)?)?;
            commands::backtest(cfg, &data, r.seed, &r.out).map(|(_, written)| written)
        }
    }
}
