use std::fs::File;
use std::path::PathBuf;

use anyhow::Context as _;
use clap::ValueEnum;
use fdrift_core::estimators::{
    estimate_mixed, estimate_mle, estimate_ou_modified, estimate_ratio, estimate_sequential, write_outputs_csv,
    SequentialKind,
};
use fdrift_core::experiments::SCHEMA_VERSION;
use fdrift_core::{io, ChiMethod, EstimatorKind, EstimatorOutput, ModelConfig, Observation, SamplePath, StoppingResult};
use serde::Serialize;

use crate::model::{ModelArgs, SimulationArgs};
use crate::simulate::sibling;
use crate::{Context, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// mle, ratio, mixed, seq_mle, seq_ratio, seq_mixed or ou_modified.
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: EstimatorKind,

    /// Observed path as `t,value` CSV; without it a path is simulated from the model flags.
    #[arg(long, short, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// With --input: also read `<stem>.bh.csv` and `<stem>.w.csv` for noise diagnostics.
    #[arg(long, requires = "input")]
    pub with_noise: bool,

    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub sim: SimulationArgs,

    /// Information level `h` of sequential estimators.
    #[arg(long = "h", value_name = "H_LEVEL")]
    pub level: Option<f64>,

    /// How J' is obtained for the likelihood estimators.
    #[arg(long, value_parser = parse_chi, default_value = "closed")]
    pub chi_method: ChiMethod,

    /// Weight exponent of ou_modified (default: the model theta).
    #[arg(long)]
    pub theta_weight: Option<f64>,

    /// Report file; default `estimate.json` or `estimate.csv` under the output root.
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: fdrift_core::Error| e.to_string())
}

fn parse_chi(s: &str) -> Result<ChiMethod, String> {
    s.parse().map_err(|e: fdrift_core::Error| e.to_string())
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    estimator: EstimatorKind,
    model: &'a ModelConfig,
    source: String,
    /// True parameter of a simulated path.
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    steps: usize,
    output: &'a EstimatorOutput,
    #[serde(skip_serializing_if = "Option::is_none")]
    stopping: Option<&'a StoppingResult>,
}

/// Rounds to 12 significant digits for display.
fn shown(v: f64) -> f64 {
    format!("{v:.11e}").parse().unwrap_or(v)
}

pub fn run(ctx: &Context, args: Args) -> anyhow::Result<()> {
    let kind = args.estimator;
    if kind.is_sequential() && args.level.is_none() {
        return Err(Usage(format!("{kind} needs an information level --h")).into());
    }
    if !kind.is_sequential() && args.level.is_some() {
        return Err(Usage(format!("--h applies only to sequential estimators, not {kind}")).into());
    }
    if args.input.is_some() && (args.sim.horizon.is_some() || args.sim.steps.is_some() || args.sim.zero_noise) {
        return Err(Usage("--input cannot be combined with --T, --n or --zero-noise".into()).into());
    }
    let cfg = args.model.resolve()?;
    let coeffs = cfg.instance()?.coeffs;

    let (x, noise, source, theta) = match &args.input {
        Some(path) => {
            let read = |p: &std::path::Path| -> anyhow::Result<SamplePath> {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Ok(SamplePath::read_csv(f).map_err(|e| Usage(format!("{}: {e}", p.display())))?)
            };
            let x = read(path)?;
            let noise = if args.with_noise {
                Some((read(&sibling(path, "w"))?, read(&sibling(path, "bh"))?))
            } else {
                None
            };
            (x, noise, path.display().to_string(), None)
        }
        None => {
            let sim = args.sim.simulate(&cfg)?;
            let source = format!("simulated (seed {}, index {})", args.sim.seed, args.sim.index);
            (sim.x, Some((sim.w, sim.bh)), source, Some(cfg.theta))
        }
    };
    let obs = match &noise {
        Some((w, bh)) => Observation::with_noise(&x, w, bh),
        None => Observation::path(&x),
    };

    let level = args.level.unwrap_or(f64::NAN);
    let (output, stopping) = match kind {
        EstimatorKind::Mle => (estimate_mle(&obs, &coeffs, cfg.hurst, args.chi_method)?, None),
        EstimatorKind::Ratio => (estimate_ratio(&obs, &coeffs)?, None),
        EstimatorKind::Mixed => (estimate_mixed(&obs, &coeffs)?, None),
        EstimatorKind::OuModified => (estimate_ou_modified(&obs, args.theta_weight.unwrap_or(cfg.theta))?, None),
        EstimatorKind::SeqMle | EstimatorKind::SeqRatio | EstimatorKind::SeqMixed => {
            let seq = match kind {
                EstimatorKind::SeqMle => SequentialKind::Mle(args.chi_method),
                EstimatorKind::SeqRatio => SequentialKind::Ratio,
                _ => SequentialKind::Mixed,
            };
            let (out, stop) = estimate_sequential(&obs, &coeffs, cfg.hurst, level, seq)?;
            (out, Some(stop))
        }
    };

    println!("estimator: {kind}");
    println!("estimate: {}", shown(output.estimate));
    if let Some(t) = theta {
        println!("theta: {t}");
    }
    println!("numerator: {}", output.numerator);
    println!("denominator: {}", output.denominator);
    println!("horizon: {}", output.horizon);
    for (k, v) in &output.diagnostics {
        println!("{k}: {v}");
    }

    let default_name = match args.format {
        Format::Json => "estimate.json",
        Format::Csv => "estimate.csv",
    };
    let out = args.output.clone().unwrap_or_else(|| ctx.default_path(default_name));
    match args.format {
        Format::Json => io::write_json(
            &out,
            &Report {
                schema_version: SCHEMA_VERSION,
                estimator: kind,
                model: &cfg,
                source,
                theta,
                steps: x.grid().steps(),
                output: &output,
                stopping: stopping.as_ref(),
            },
        )?,
        Format::Csv => io::atomic_write_with(&out, |buf| write_outputs_csv(std::slice::from_ref(&output), buf))?,
    }
    println!("report: {}", out.display());
    Ok(())
}
