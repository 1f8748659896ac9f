use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use tidal_control::io::{run_scenario, run_scenario_file, Overrides, ScenarioConfig, Subcommand};
use tidal_control::model::JacobianMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Forward,
    Tangent,
    Adjoint,
    Gradcheck,
    Taylor,
    Optimize,
    Assimilate,
    Uniqueness,
    Secondorder,
    Verify,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Forward => Subcommand::Forward,
            Command::Tangent => Subcommand::Tangent,
            Command::Adjoint => Subcommand::Adjoint,
            Command::Gradcheck => Subcommand::Gradcheck,
            Command::Taylor => Subcommand::Taylor,
            Command::Optimize => Subcommand::Optimize,
            Command::Assimilate => Subcommand::Assimilate,
            Command::Uniqueness => Subcommand::Uniqueness,
            Command::Secondorder => Subcommand::Secondorder,
            Command::Verify => Subcommand::Verify,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Paper,
    Exact,
}

/// Optimal control and data assimilation for the linearized tidal model.
///
/// Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 property failure.
#[derive(Debug, Parser)]
#[command(name = "tidal", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (JSON). Without it the built-in default scenario runs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Friction Jacobian used by the tangent and the adjoint.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Comma-separated step sizes for `taylor`.
    #[arg(long, value_delimiter = ',')]
    tau_seq: Option<Vec<f64>>,
    /// Number of scanned tuples for `secondorder`.
    #[arg(long)]
    theta_samples: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        mode: cli.mode.map(|m| match m {
            Mode::Paper => JacobianMode::Paper,
            Mode::Exact => JacobianMode::Exact,
        }),
        tau_seq: cli.tau_seq,
        theta_samples: cli.theta_samples,
        max_iters: cli.max_iters,
        tol: cli.tol,
    };
    let sub = Subcommand::from(cli.command);
    let result = match &cli.config {
        Some(path) => run_scenario_file(sub, path, &overrides),
        None => run_scenario(sub, ScenarioConfig::default_scenario(), Path::new("."), &overrides),
    };
    match result {
        Ok(summary) => {
            for n in &summary.notes {
                eprintln!("{sub}: note: {n}");
            }
            let status = if summary.passed { "ok" } else { "FAILED" };
            println!("{sub}: {} [{status}]", summary.headline);
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("{sub}: error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
