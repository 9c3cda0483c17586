use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod bound;
mod estimate;
mod experiment;
mod model;
mod simulate;
mod transform;

/// Exit status for bad input; clap uses the same code for flag errors.
const USAGE: u8 = 2;
const FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "fdrift", version, about = "Simulation and drift estimation for SDEs driven by fractional Brownian motion")]
struct Cli {
    /// Worker threads for Monte Carlo work (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Root directory for default output files.
    #[arg(long, global = true, env = "FDRIFT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one path of a model and write it as CSV.
    Simulate(simulate::Args),
    /// Apply a fractional derivative, the Molchan transform or the GLS integral to CSV paths.
    Transform(transform::Args),
    /// Estimate the drift parameter from a CSV path or a freshly simulated one.
    Estimate(estimate::Args),
    /// Run a Monte Carlo experiment described by a TOML config.
    Experiment(experiment::Args),
    /// Numerical checks of the fractional-derivative moment, Gaussian and growth bounds.
    BoundCheck(bound::Args),
    /// Run the analytic-oracle checks.
    Selftest,
}

/// Input the user can fix; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

/// A run that completed but whose checks did not pass; maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ChecksFailed(pub String);

pub struct Context {
    pub output_dir: PathBuf,
    pub output_dir_explicit: bool,
}

impl Context {
    pub fn default_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return USAGE;
    }
    match err.downcast_ref::<fdrift_core::Error>() {
        Some(e) if e.is_usage() => USAGE,
        _ => FAILURE,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Usage("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let ctx = Context {
        output_dir_explicit: cli.output_dir.is_some(),
        output_dir: cli.output_dir.unwrap_or_else(|| PathBuf::from(".")),
    };
    match cli.command {
        Command::Simulate(args) => simulate::run(&ctx, args),
        Command::Transform(args) => transform::run(&ctx, args),
        Command::Estimate(args) => estimate::run(&ctx, args),
        Command::Experiment(args) => experiment::run(&ctx, args),
        Command::BoundCheck(args) => bound::run(&ctx, args),
        Command::Selftest => selftest(),
    }
}

fn selftest() -> anyhow::Result<()> {
    let start = std::time::Instant::now();
    let checks = fdrift_core::selftest::run_with(|c| {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    });
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed, {:.1}s", checks.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(ChecksFailed(format!("{failed} selftest checks failed")).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
