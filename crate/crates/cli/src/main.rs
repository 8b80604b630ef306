//! Command line front end: build an embedding from a JSON config, check it
//! analytically, simulate it, and compare local-time functionals across
//! curves.

mod commands;
mod config;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skewembed::EmbedError;
use thiserror::Error;

use commands::Overrides;

/// Bad input: config, measure, curve or table.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(pub String);

/// An analytic or numerical check did not hold.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Numerical(pub String);

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "skewembed",
    version,
    about = "Skorokhod embeddings via skewed Brownian motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config (schema 1).
    config: PathBuf,
    /// Override sim.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override sim.n_paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Override outputs.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write profile.csv, spec.csv, exitlaw.csv and admissibility.json.
    Build(Common),
    /// Run the skew walk and write ensemble_summary.json and ecdf.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulate from a spec.csv written by `build` instead of rebuilding.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Estimate E Psi(L^x) for each curve in the compare block.
    Compare(Common),
    /// Analytic checks of the stopped law against the target.
    Verify(Common),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return EXIT_VALIDATION;
        }
        if cause.is::<Numerical>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<EmbedError>() {
            return match e {
                EmbedError::DegenerateCurve { .. } | EmbedError::DegenerateBoundaries { .. } => {
                    EXIT_NUMERICAL
                }
                _ => EXIT_VALIDATION,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(c) => commands::build(&c.config, &c.overrides()),
        Command::Simulate { common, spec } => {
            commands::simulate(&common.config, spec.as_deref(), &common.overrides())
        }
        Command::Compare(c) => commands::compare(&c.config, &c.overrides()),
        Command::Verify(c) => commands::verify(&c.config, &c.overrides()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
