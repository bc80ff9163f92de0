use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod verify;

/// Reserves, simulations and modification factors for multi-state contracts.
#[derive(Debug, Parser)]
#[command(name = "thiele", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the linear reserve equation and write the value table.
    Solve(ContractArgs),
    /// Solve with the surrender payments tied to the reserve itself (Picard iteration).
    SolveNonlinear(ContractArgs),
    /// Simulate paths and write the event dump.
    Simulate(ContractArgs),
    /// Monte Carlo estimate of the time-zero reserve, compared with the solver.
    Estimate(EstimateArgs),
    /// Adjustment factors along simulated paths plus the equivalence checks.
    Modifications(ContractArgs),
    /// Run every acceptance check on the built-in contracts.
    Verify(Options),
}

#[derive(Debug, Args)]
pub struct Options {
    /// Time step of the solvers.
    #[arg(long, default_value_t = 1e-3, value_parser = positive)]
    pub step: f64,
    /// Duration step for semi-Markov contracts (defaults to --step).
    #[arg(long, value_parser = positive)]
    pub duration_step: Option<f64>,
    /// Number of simulated paths.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub paths: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Picard tolerance of the nonlinear solver.
    #[arg(long, default_value_t = 1e-6, value_parser = positive)]
    pub tol: f64,
    /// Largest number of modifications accepted on one path.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub mode_jump_cap: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl Options {
    pub fn duration_step(&self) -> f64 {
        self.duration_step.unwrap_or(self.step)
    }
}

#[derive(Debug, Args)]
pub struct ContractArgs {
    /// Contract file (TOML).
    pub contract: PathBuf,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    /// Value the adjusted cash flow instead of the contract's own.
    #[arg(long)]
    pub adjusted: bool,
    /// Skip the solver comparison.
    #[arg(long)]
    pub no_compare: bool,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(x),
        Ok(x) => Err(format!("{x} is not a positive number")),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::SolveNonlinear(a) => commands::solve_nonlinear(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Modifications(a) => commands::modifications(a),
        Command::Verify(o) => verify::run(o),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
