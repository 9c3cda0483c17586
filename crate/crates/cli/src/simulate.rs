use std::path::{Path, PathBuf};

use fdrift_core::{io, SamplePath};

use crate::model::{ModelArgs, SimulationArgs};
use crate::{Context, Usage};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub sim: SimulationArgs,

    /// Output CSV (`t,value`); default `path.csv` under the output root.
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    /// Also write the driving fBm and Brownian paths next to the output.
    #[arg(long)]
    pub noise: bool,
}

/// `dir/stem.csv` -> `dir/stem.<tag>.csv`
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

pub fn write_path(path: &Path, p: &SamplePath) -> anyhow::Result<()> {
    io::atomic_write_with(path, |buf| p.write_csv(buf))?;
    Ok(())
}

pub fn run(ctx: &Context, args: Args) -> anyhow::Result<()> {
    if args.sim.horizon.is_none() || args.sim.steps.is_none() {
        return Err(Usage("simulate needs --T and --n".into()).into());
    }
    let cfg = args.model.resolve()?;
    let out = args.output.clone().unwrap_or_else(|| ctx.default_path("path.csv"));
    let sim = args.sim.simulate(&cfg)?;
    write_path(&out, &sim.x)?;
    if args.noise {
        write_path(&sibling(&out, "bh"), &sim.bh)?;
        write_path(&sibling(&out, "w"), &sim.w)?;
    }
    let grid = sim.x.grid();
    println!(
        "model={} theta={} H={} T={} n={} seed={} index={} X_T={} -> {}",
        cfg.kind.name(),
        cfg.theta,
        cfg.hurst.value(),
        grid.horizon(),
        grid.steps(),
        args.sim.seed,
        args.sim.index,
        sim.x.terminal(),
        out.display()
    );
    Ok(())
}
