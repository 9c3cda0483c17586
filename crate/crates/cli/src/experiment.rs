use std::path::PathBuf;

use fdrift_core::experiments::{run as run_experiment, ExperimentConfig};

use crate::{ChecksFailed, Context, Usage};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Experiment config (TOML).
    #[arg(long, short, value_name = "FILE")]
    pub config: PathBuf,

    /// Overrides `replicates`.
    #[arg(long)]
    pub replicates: Option<usize>,

    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Overrides `name`, which names the report files.
    #[arg(long)]
    pub name: Option<String>,
}

pub fn run(ctx: &Context, args: Args) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.name {
        if n.is_empty() || n.contains(['/', '\\']) {
            return Err(Usage(format!("--name `{n}` must be a plain file stem")).into());
        }
        cfg.name = n;
    }
    cfg.validate()?;
    // flag or environment > config > current directory
    let dir = if ctx.output_dir_explicit {
        ctx.output_dir.clone()
    } else {
        cfg.output_dir.clone().unwrap_or_else(|| ctx.output_dir.clone())
    };

    let start = std::time::Instant::now();
    let report = run_experiment(&cfg)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let (json, csv) = report.save(&dir)?;
    println!(
        "{} ({:?}, {} replicates) in {:.1}s -> {}, {}",
        report.name,
        report.kind,
        cfg.replicates,
        start.elapsed().as_secs_f64(),
        json.display(),
        csv.display()
    );
    if !report.passed {
        return Err(ChecksFailed(format!("experiment `{}` failed some checks", report.name)).into());
    }
    Ok(())
}
