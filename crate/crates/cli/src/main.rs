//! `fbsdep` command-line runner: one subcommand per experiment pillar.
//!
//! Exit codes: 0 success, 2 configuration error, 3 assumption-validation
//! failure, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbsdep::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use fbsdep::Error;

#[derive(Parser)]
#[command(name = "fbsdep", version, about = "Infinite-horizon FBSDEP experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory from the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Checks every numerically checkable standing assumption.
    Validate(Common),
    /// Simulates the forward state under both measures.
    Simulate(Common),
    /// Solves the truncated backward equation across horizons.
    SolveBsde(Common),
    /// A priori, high-order, and stability estimates.
    Estimates(Common),
    /// Convex-perturbation convergence rates and the variational inequality.
    Variational(Common),
    /// Solves the three adjoint equations and their diagnostics.
    Adjoint(Common),
    /// Conditional maximum-condition profile on the candidate control.
    MaxPrinciple(Common),
    /// Brute-force reference answers (grid search, Riccati ODE).
    Oracle(Common),
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Validate(c) => (ExperimentKind::Validate, c),
            Command::Simulate(c) => (ExperimentKind::Simulate, c),
            Command::SolveBsde(c) => (ExperimentKind::SolveBsde, c),
            Command::Estimates(c) => (ExperimentKind::Estimates, c),
            Command::Variational(c) => (ExperimentKind::Variational, c),
            Command::Adjoint(c) => (ExperimentKind::Adjoint, c),
            Command::MaxPrinciple(c) => (ExperimentKind::MaxPrinciple, c),
            Command::Oracle(c) => (ExperimentKind::Oracle, c),
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Json(_) | Error::Io(_) => 2,
        Error::AssumptionsViolated(_) => 3,
        _ => 4,
    }
}

fn run(kind: ExperimentKind, common: Common) -> Result<(), Error> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = common.out {
        config.output_dir = Some(out);
    }
    let report = run_experiment(&config, kind)?;
    println!(
        "{}: wrote {} ({} CSV file{})",
        kind.slug(),
        report.out_dir.display(),
        report.csv_files.len(),
        if report.csv_files.len() == 1 { "" } else { "s" },
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = cli.command.split();
    match run(kind, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
