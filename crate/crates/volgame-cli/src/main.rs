//! Command-line front end: config ingestion, problem dispatch, artifact
//! serialization, and verification reporting.
//!
//! Exit codes: 0 success, 2 certification failure, 3 solver
//! non-convergence, 4 capture not bracketed, 5 config error, 1 anything
//! else (including failed verification).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod artifacts;
mod config;
mod runner;

use runner::{Action, Overrides};

/// Errors surfaced to the user, each mapped to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error on '{field}': {constraint}")]
    Validation { field: String, constraint: String },
    #[error("missing artifact: {path}")]
    MissingArtifact { path: String },
    #[error(transparent)]
    Solver(#[from] volgame::Error),
}

impl CliError {
    pub fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use volgame::Error as E;
        match self {
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::Validation { .. }
            | CliError::MissingArtifact { .. } => 5,
            CliError::Solver(e) => match e {
                E::NotCertified(_) => 2,
                E::NoConvergence { .. }
                | E::InnerNoConvergence { .. }
                | E::NonlinearStepFailed { .. } => 3,
                E::CaptureNotBracketed { .. } => 4,
                E::InvalidInterval { .. }
                | E::TooFewNodes { .. }
                | E::SimpsonRequiresOddNodes { .. }
                | E::DimensionMismatch { .. }
                | E::GridMismatch { .. }
                | E::LengthMismatch { .. } => 5,
                _ => 1,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "volgame", version, about = "Solvers for zero-sum Volterra integral games")]
struct Cli {
    /// Path to the JSON config document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Residual tolerance override.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed override for randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Solve even when certification fails.
    #[arg(long, global = true)]
    override_certification: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quadratic-form operations.
    Quadform {
        #[command(subcommand)]
        action: QuadformCmd,
    },
    /// Linear-quadratic game.
    Lq {
        #[command(subcommand)]
        action: LqCmd,
    },
    /// Games linear-quadratic in the controls.
    Lqc {
        #[command(subcommand)]
        action: LqcCmd,
    },
    /// Pursuit-evasion with free capture time.
    Pursuit {
        #[command(subcommand)]
        action: PursuitCmd,
    },
    /// Recompute the residual suite from serialized artifacts.
    Verify {
        /// Directory holding trajectory.csv and report.json.
        #[arg(long)]
        artifacts: PathBuf,
    },
}

#[derive(Subcommand)]
enum QuadformCmd {
    /// Solve the saddle-point system.
    Saddle,
    /// Run the definiteness certification only.
    Check,
}

#[derive(Subcommand)]
enum LqCmd {
    Solve,
}

#[derive(Subcommand)]
enum LqcCmd {
    Solve {
        #[arg(long, value_enum)]
        side: Side,
    },
}

#[derive(Subcommand)]
enum PursuitCmd {
    Solve,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Side {
    Lower,
    Upper,
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config", "required"))?;
    let config = config::load_config(config_path)?;
    let overrides = Overrides {
        out: cli.out.clone(),
        tol: cli.tol,
        seed: cli.seed,
        override_certification: cli.override_certification,
    };
    match &cli.command {
        Command::Verify { artifacts } => {
            let (_report, all_pass) = runner::verify(&config, artifacts, cli.tol)?;
            Ok(if all_pass { 0 } else { 1 })
        }
        command => {
            let action = match command {
                Command::Quadform {
                    action: QuadformCmd::Saddle,
                } => Action::QuadformSaddle,
                Command::Quadform {
                    action: QuadformCmd::Check,
                } => Action::QuadformCheck,
                Command::Lq { action: LqCmd::Solve } => Action::LqSolve,
                Command::Lqc {
                    action: LqcCmd::Solve { side: Side::Lower },
                } => Action::LqcSolveLower,
                Command::Lqc {
                    action: LqcCmd::Solve { side: Side::Upper },
                } => Action::LqcSolveUpper,
                Command::Pursuit {
                    action: PursuitCmd::Solve,
                } => Action::PursuitSolve,
                Command::Verify { .. } => unreachable!(),
            };
            let report = runner::run(&config, action, &overrides)?;
            println!(
                "{}: exit {}{}",
                report.command,
                report.exit_status,
                report
                    .value
                    .map(|v| format!(", value {v:.6e}"))
                    .unwrap_or_default()
            );
            for (name, value) in &report.residuals {
                println!("  {name} = {value:.3e}");
            }
            Ok(report.exit_status)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
