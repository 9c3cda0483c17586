use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::ValueEnum;
use fdrift_core::frac::{frac_deriv_backward, frac_deriv_forward, gls_bound, gls_integral};
use fdrift_core::molchan::{molchan_martingale, molchan_transform};
use fdrift_core::{io, FractionalOrder, GridFunction, HurstIndex, SamplePath};
use serde::Serialize;

use crate::{Context, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Op {
    /// Left-sided derivative `D^α_{a+} f`.
    FracForward,
    /// Right-sided derivative `D^α_{b−} f`.
    FracBackward,
    /// `J_t = ∫_0^t l_H(t, s) f(s) ds`.
    Molchan,
    /// Molchan martingale of an fBm path.
    Martingale,
    /// Generalized Lebesgue–Stieltjes integral `∫ f dg` with its bound.
    Gls,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    pub op: Op,

    /// Input function as `t,value` CSV.
    #[arg(long, short, value_name = "FILE")]
    pub input: PathBuf,

    /// Integrator `g` for `gls`.
    #[arg(long, value_name = "FILE")]
    pub integrator: Option<PathBuf>,

    /// Fractional order.
    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long = "H", value_name = "H")]
    pub hurst: Option<f64>,

    /// Base point of `frac-forward` (default: grid start).
    #[arg(long)]
    pub a: Option<f64>,

    /// Base point of `frac-backward` (default: horizon).
    #[arg(long)]
    pub b: Option<f64>,

    /// Output file; default `transform.csv` (`transform.json` for gls) under the output root.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn read(path: &Path) -> anyhow::Result<GridFunction> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(GridFunction::read_csv(f).map_err(|e| Usage(format!("{}: {e}", path.display())))?)
}

fn need<T>(v: Option<T>, flag: &str, op: Op) -> anyhow::Result<T> {
    v.ok_or_else(|| Usage(format!("--op {:?} needs {flag}", op).to_lowercase()).into())
}

#[derive(Serialize)]
struct GlsReport {
    schema_version: u32,
    alpha: f64,
    integral: f64,
    bound: f64,
}

pub fn run(ctx: &Context, args: Args) -> anyhow::Result<()> {
    let f = read(&args.input)?;
    let csv_out = || args.output.clone().unwrap_or_else(|| ctx.default_path("transform.csv"));
    match args.op {
        Op::FracForward | Op::FracBackward => {
            let alpha = FractionalOrder::new(need(args.alpha, "--alpha", args.op)?)?;
            let d = if args.op == Op::FracForward {
                frac_deriv_forward(&f, alpha, args.a.unwrap_or(0.0))?
            } else {
                frac_deriv_backward(&f, alpha, args.b.unwrap_or(f.grid().horizon()))?
            };
            let out = csv_out();
            io::atomic_write_with(&out, |buf| d.write_csv(buf))?;
            println!("wrote {} ({} nodes)", out.display(), f.grid().len());
        }
        Op::Molchan | Op::Martingale => {
            let hurst = HurstIndex::for_estimation(need(args.hurst, "--H", args.op)?)?;
            let out = csv_out();
            if args.op == Op::Molchan {
                let j = molchan_transform(&f, hurst)?;
                io::atomic_write_with(&out, |buf| j.write_csv(buf))?;
                println!("J_T = {} -> {}", j.values().last().copied().unwrap_or(f64::NAN), out.display());
            } else {
                let path = SamplePath::new(*f.grid(), f.values().to_vec(), Default::default())?;
                let m = molchan_martingale(&path, hurst)?;
                io::atomic_write_with(&out, |buf| m.write_csv(buf))?;
                println!("M_T = {} -> {}", m.terminal(), out.display());
            }
        }
        Op::Gls => {
            let alpha = FractionalOrder::new(need(args.alpha, "--alpha", args.op)?)?;
            let g = read(&need(args.integrator.clone(), "--integrator", args.op)?)?;
            let integral = gls_integral(&f, &g, alpha)?;
            let bound = gls_bound(&f, &g, alpha)?;
            let out = args.output.clone().unwrap_or_else(|| ctx.default_path("transform.json"));
            io::write_json(
                &out,
                &GlsReport {
                    schema_version: fdrift_core::experiments::SCHEMA_VERSION,
                    alpha: alpha.value(),
                    integral,
                    bound,
                },
            )?;
            println!("integral = {integral}");
            println!("bound = {bound}");
            println!("report: {}", out.display());
        }
    }
    Ok(())
}
