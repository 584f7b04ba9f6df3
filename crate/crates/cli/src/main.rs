//! `fastdiff`: constants, profiles, tail fits and extinction simulations for
//! the fast diffusion equation.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
//! 3 invariant violation.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::output::OutDir;

#[derive(Parser, Debug)]
#[command(name = "fastdiff", version, about = "Self-similar profiles and extinction runs for u_t = Δu^m")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's `out`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for perturbation placement (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derived constants and regime classification.
    Constants,
    /// Solve a profile and check its invariants.
    Profile {
        /// Also write the inverted profile (requires m = (n-2)/(n+2)).
        #[arg(long)]
        invert: bool,
    },
    /// Fit the tail normal form; two lambdas add the B scaling check.
    Asympt {
        /// Refuse parameters outside the second-order regime.
        #[arg(long)]
        require_second_order: bool,
    },
    /// Simulate a self-similar or perturbed run up to a slow time.
    Simulate,
}

/// Errors raised by the front end itself, tagged with their exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use fastdiff::Error as E;
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => 1,
                Failure::Invariant(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Range(_)
                | E::WrongExponent { .. }
                | E::WrongKind(_)
                | E::KindMismatch(..)
                | E::WrongRegime { .. }
                | E::WindowTooShort { .. }
                | E::GridMismatch(_) => 1,
                E::InvariantViolation(_) | E::SandwichViolation { .. } | E::PositivityLoss { .. } => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

type Handler = fn(&RunConfig, &mut OutDir) -> anyhow::Result<serde_json::Value>;

fn execute(cli: Cli) -> anyhow::Result<()> {
    let path = cli
        .config
        .ok_or_else(|| Failure::Usage("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let (name, run): (&str, Handler) = match cli.command {
        Command::Constants => ("constants", commands::constants),
        Command::Profile { invert } => {
            cfg.profile.invert |= invert;
            ("profile", commands::profile)
        }
        Command::Asympt { require_second_order } => {
            cfg.asympt.require_second_order |= require_second_order;
            ("asympt", commands::asympt)
        }
        Command::Simulate => {
            cfg = commands::resolve(&cfg);
            ("simulate", commands::simulate)
        }
    };
    let root = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutDir::create(&root)?;
    let result = run(&cfg, &mut out);
    // the manifest is written even when checks fail, so failed runs stay traceable
    out.finish(name, &cfg)?;
    let report = result?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
