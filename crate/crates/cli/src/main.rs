//! `shapeline`: builds and checks nearly coconvex approximants.
//!
//! Exit codes: 0 pass, 1 input error, 2 assertion failure, 3 calibration exhausted.
//! `SHAPELINE_THREADS` caps the worker count.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Config, Overrides};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "shapeline",
    version,
    about = "Nearly coconvex spline and polynomial approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Build the shape-preserving spline, check S″Π ≥ 0, dump CSV and JSON.
    BuildSpline,
    /// Build the polynomial, check P″Π ≥ 0 away from the inflection points.
    BuildPoly,
    /// Run a study over functions and levels; writes report.json and tables.csv.
    Study,
    /// Build the polynomial with increasing multipliers until the checks pass.
    Calibrate,
    /// Write a step or ramp table as x,value,derivative CSV.
    Dump,
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("SHAPELINE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| CliError::Config(format!("SHAPELINE_THREADS must be a count, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Threads(e.to_string()))
}

fn run(cli: &Cli) -> CliResult<u8> {
    init_threads()?;
    let config: Config = cli.overrides.resolve()?;
    if cli.overrides.print_config {
        let text =
            serde_json::to_string_pretty(&config).map_err(|e| CliError::Config(e.to_string()))?;
        println!("{text}");
        return Ok(0);
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config(
            "a subcommand is required, see --help".into(),
        ));
    };
    match command {
        Command::BuildSpline => commands::build_spline_cmd(&config),
        Command::BuildPoly => commands::build_poly_cmd(&config),
        Command::Study => commands::study_cmd(&config),
        Command::Calibrate => commands::calibrate_cmd(&config),
        Command::Dump => commands::dump_cmd(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
