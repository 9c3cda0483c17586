use clap::ValueEnum;
use fdrift_core::growth::{
    verify_gaus1_bound, verify_growth_law, verify_moment_bound, verify_sup_fbm, Gaus1Config, GrowthConfig, GrowthReport,
    MomentConfig,
};
use fdrift_core::{io, FractionalOrder, HurstIndex};
use serde::Serialize;

use crate::{ChecksFailed, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    /// Second moment of the two-time fractional derivative against its envelope.
    Moment,
    /// Grid study of the Gaussian increment quantity.
    Gaus1,
    /// Growth of the normalized sup of the fractional derivative of fBm.
    Growth,
    /// Same study for the sup of fBm itself.
    Sup,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    pub what: What,

    #[arg(long = "H", value_name = "H", default_value_t = 0.7)]
    pub hurst: f64,

    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,

    /// Log power of the growth envelope.
    #[arg(long)]
    pub p: Option<f64>,

    #[arg(long)]
    pub replicates: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Growth horizons, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,

    /// Growth grid step.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    schema_version: u32,
    check: &'static str,
    report: &'a T,
}

fn save<T: Serialize>(ctx: &Context, check: &'static str, report: &T) -> anyhow::Result<std::path::PathBuf> {
    let path = ctx.default_path(&format!("bound_{check}.json"));
    io::write_json(
        &path,
        &Wrapped {
            schema_version: fdrift_core::experiments::SCHEMA_VERSION,
            check,
            report,
        },
    )?;
    Ok(path)
}

fn verdict(name: &str, passed: bool) -> anyhow::Result<()> {
    println!("{name}: {}", if passed { "passed" } else { "FAILED" });
    if passed {
        Ok(())
    } else {
        Err(ChecksFailed(format!("bound check `{name}` failed")).into())
    }
}

pub fn run(ctx: &Context, args: Args) -> anyhow::Result<()> {
    let hurst = HurstIndex::new(args.hurst)?;
    match args.what {
        What::Moment => {
            let mut cfg = MomentConfig {
                hurst,
                alpha: FractionalOrder::for_fbm(args.alpha, hurst)?,
                ..MomentConfig::default()
            };
            if let Some(r) = args.replicates {
                cfg.replicates = r;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let report = verify_moment_bound(&cfg)?;
            println!("t1\tt2\trms\tstderr\tbound\tratio");
            for r in &report.rows {
                println!("{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}", r.t1, r.t2, r.rms, r.rms_stderr, r.bound, r.ratio);
            }
            println!("share below bound: {}", report.share_below);
            println!("report: {}", save(ctx, "moment", &report)?.display());
            verdict("moment", report.passed)
        }
        What::Gaus1 => {
            let cfg = Gaus1Config::new(hurst, FractionalOrder::for_fbm(args.alpha, hurst)?);
            let report = verify_gaus1_bound(&cfg)?;
            for l in &report.levels {
                println!("grid {:>4}: sup {}", l.points, l.sup);
            }
            println!("sup finite: {}", report.sup_finite);
            println!("refinement stable: {}", report.refinement_stable);
            println!("ratio at u -> 1+: {:e} (limit 0)", report.limit_at_one);
            println!("ratio at u -> inf: {} (limit 1)", report.limit_at_infinity);
            println!("remainder at u -> 1+: {:e} (limit 0)", report.remainder_limit_at_one);
            println!("remainder at u -> inf: {:e} (limit 0)", report.remainder_limit_at_infinity);
            println!("report: {}", save(ctx, "gaus1", &report)?.display());
            verdict("gaus1", report.passed)
        }
        What::Growth | What::Sup => {
            let mut cfg = match args.what {
                What::Growth => GrowthConfig::derivative(hurst, FractionalOrder::for_fbm(args.alpha, hurst)?),
                _ => GrowthConfig::sup_fbm(hurst),
            };
            if let Some(p) = args.p {
                cfg.p = p;
            }
            if let Some(r) = args.replicates {
                cfg.replicates = r;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(h) = args.horizons {
                cfg.horizons = h;
            }
            if let Some(dt) = args.dt {
                cfg.dt = dt;
            }
            let (name, report) = match args.what {
                What::Growth => ("growth", verify_growth_law(&cfg)?),
                _ => ("sup", verify_sup_fbm(&cfg)?),
            };
            print_growth(&report);
            let rows = ctx.default_path(&format!("bound_{name}_rows.csv"));
            let tail = ctx.default_path(&format!("bound_{name}_tail.csv"));
            io::atomic_write_with(&rows, |buf| report.write_rows_csv(buf))?;
            io::atomic_write_with(&tail, |buf| report.write_tail_csv(buf))?;
            println!("report: {}, {}, {}", save(ctx, name, &report)?.display(), rows.display(), tail.display());
            verdict(name, report.passed)
        }
    }
}

fn print_growth(report: &GrowthReport) {
    println!("T\tmedian xi\tcontrol median");
    for r in &report.rows {
        println!("{}\t{:.6}\t{:.6}", r.horizon, r.xi.median(), r.control.median());
    }
    println!("median spread: {:.4} (stable: {})", report.median_spread, report.stable);
    println!("control spread: {:.4} (grows: {})", report.control_spread, report.control_grows);
    println!("tail slopes: {:?} (concave: {})", report.tail_slopes, report.tail_concave);
}
