//! `ampflow`: simulate phase-retrieval instances, run solvers and Monte-Carlo
//! sweeps, and run the invariant check suite.
//!
//! Exit codes: 0 success, 1 config error, 2 numerical abort, 3 check failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use ampflow::harness::suite::Fault;
use ampflow::Algorithm;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::CheckOptions;
use crate::config::{CliConfig, Overrides, Step};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "ampflow", version, about = "Phase retrieval by (stochastic) amplitude flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an instance and write its ensemble (operator, measurements, truth).
    Simulate(Common),
    /// Run each configured solver once and write per-iteration traces.
    Solve(Common),
    /// Run every solver over many seeded trials and write trial-mean curves.
    Sweep(Common),
    /// Run the invariant check suite and write a pass/fail report.
    Check {
        #[command(flatten)]
        common: Common,
        /// Run only the finite-difference gradient check.
        #[arg(long)]
        fd: bool,
        #[arg(long, value_enum, hide = true)]
        fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Gradient,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Af,
    Saf,
    Kaczmarz,
    Pie,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Af => Algorithm::Af,
            AlgoArg::Saf => Algorithm::Saf,
            AlgoArg::Kaczmarz => Algorithm::Kaczmarz,
            AlgoArg::Pie => Algorithm::Pie,
        }
    }
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (see config.schema.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Previously simulated ensemble file; overrides the config.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    /// Base seed for solver sampling and the check suite.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the configured solvers with one solver of this kind.
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    eps: Option<f64>,
    /// Step size for AF/SAF, or `auto` for 1/||A||^2.
    #[arg(long)]
    mu: Option<Step>,
    /// Decay exponent: steps scale as (1 + t)^-(1/2 + theta).
    #[arg(long)]
    theta: Option<f64>,
    /// PIE step size alpha.
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Blocks sampled per stochastic gradient.
    #[arg(long)]
    k: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<CliConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => config::load(p)?,
            None => CliConfig::default(),
        };
        cfg.apply(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            algo: self.algo.map(Into::into),
            eps: self.eps,
            mu: self.mu,
            theta: self.theta,
            alpha0: self.alpha0,
            iters: self.iters,
            trials: self.trials,
            k: self.k,
            ensemble: self.ensemble.clone(),
        })?;
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(c.load()?),
        Command::Solve(c) => commands::solve(c.load()?),
        Command::Sweep(c) => commands::sweep(c.load()?),
        Command::Check { common, fd, fault } => {
            let cfg = common.load()?;
            let opts = CheckOptions {
                eps: common.eps,
                fd_only: fd,
                fault: fault.map(|FaultArg::Gradient| Fault::Gradient),
            };
            commands::check(cfg, opts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are config errors; help and version are not errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ampflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
