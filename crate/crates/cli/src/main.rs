//! `fundspan` command-line tool.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use run::Failure;

#[derive(Debug, Parser)]
#[command(name = "fundspan", version, about = "Fund-spanned portfolio control: solve, simulate and evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the standing assumptions on the scenario's market.
    Validate(RunArgs),
    /// Solve the Bellman equation and dump value, policy and fund coefficients.
    Solve(RunArgs),
    /// Simulate wealth paths under a strategy and dump them as CSV.
    Simulate(RunArgs),
    /// Monte Carlo estimate of expected terminal utility for a strategy.
    Evaluate(RunArgs),
    /// Epsilon-optimality report: fund policy vs oracle and off-span perturbations.
    Report(RunArgs),
    /// List the shipped scenarios, or write them as TOML with --out.
    Presets {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    /// Fund coefficients from the solved grid applied to the fund directions.
    Fund,
    /// Control interpolated directly from the solved grid.
    Policy,
    /// Closed-form constant fraction (constant markets, log or power utility).
    Oracle,
    /// Hold only the bond.
    Zero,
}

/// Grid override `nx,ny,nz,nt`; `nt = 0` picks the smallest stable count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridArg {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub nt: usize,
}

fn parse_grid(s: &str) -> Result<GridArg, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [nx, ny, nz, nt] => Ok(GridArg { nx, ny, nz, nt }),
        _ => Err(format!("expected four comma-separated counts nx,ny,nz,nt, got {}", parts.len())),
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Shipped scenario by name instead of a file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory; overrides the scenario's.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Grid sizes "nx,ny,nz,nt".
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridArg>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Strategy for simulate and evaluate.
    #[arg(long, value_enum, default_value_t = StrategyArg::Fund)]
    pub strategy: StrategyArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => run::execute("validate", &a, commands::validate),
        Command::Solve(a) => run::execute("solve", &a, commands::solve),
        Command::Simulate(a) => run::execute("simulate", &a, commands::simulate),
        Command::Evaluate(a) => run::execute("evaluate", &a, commands::evaluate),
        Command::Report(a) => run::execute("report", &a, commands::report),
        Command::Presets { out } => commands::presets(out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Failure::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
