//! `synthpanel`: batch front end for single-treated-unit panel studies.

mod commands;
mod config;
mod error;
mod figures;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synthpanel::{InferenceMode, Method};

use config::{Overrides, RunConfig};
use error::{CliError, EXIT_DATA};

#[derive(Parser)]
#[command(
    name = "synthpanel",
    version,
    about = "Synthetic control and synthetic difference-in-differences studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed for simulation (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// did, scm or sdid (overrides the config).
    #[arg(long, global = true)]
    method: Option<Method>,
    /// gaussian or permutation (overrides the config).
    #[arg(long, global = true)]
    inference: Option<InferenceMode>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Point estimate with weights and placebo inference.
    Estimate,
    /// Placebo distribution and RMSPE ratio test.
    Placebo,
    /// Figure series as CSV, with optional SVG charts.
    Figures,
    /// Specification grid and composition checks.
    Sensitivity,
    /// Monte Carlo run on a factor-model specification.
    Simulate,
    /// Panel validation report.
    Validate,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        method: cli.method,
        inference: cli.inference,
    };
    let config = RunConfig::load(path, &overrides)?;
    match cli.command {
        Command::Estimate => commands::cmd_estimate(&config),
        Command::Placebo => commands::cmd_placebo(&config),
        Command::Figures => commands::cmd_figures(&config),
        Command::Sensitivity => commands::cmd_sensitivity(&config),
        Command::Simulate => commands::cmd_simulate(&config),
        Command::Validate => match commands::cmd_validate(&config)? {
            (summary, true) => Ok(summary),
            (summary, false) => Err(CliError {
                code: "InvalidPanel".into(),
                message: summary,
                exit_code: EXIT_DATA,
            }),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
