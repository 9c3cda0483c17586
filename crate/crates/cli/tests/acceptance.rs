//! End-to-end acceptance criteria. Runs without the libtest harness so that
//! every criterion prints its own PASS/FAIL line.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fdrift_core::experiments::{self, ExperimentConfig, ExperimentReport};
use fdrift_core::frac::gls_integral;
use fdrift_core::gauss::{fbm_covariance, FbmGenerator, FbmMethod};
use fdrift_core::growth::{
    verify_gaus1_bound, verify_growth_law, verify_moment_bound, Gaus1Config, GrowthConfig, MomentConfig,
};
use fdrift_core::{EstimatorKind, FractionalOrder, GridFunction, HurstIndex, MolchanKernel, SeedPolicy, TimeGrid};
use rayon::prelude::*;

type Outcome = anyhow::Result<(bool, String)>;

fn h(v: f64) -> HurstIndex {
    HurstIndex::new(v).unwrap()
}

fn config(name: &str) -> anyhow::Result<ExperimentConfig> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    Ok(ExperimentConfig::load(&path)?)
}

/// Entrywise sample second moments of B^H on a 64-step grid against the
/// covariance, in standard errors.
fn fbm_exactness() -> Outcome {
    let start = Instant::now();
    let grid = TimeGrid::new(1.0, 64)?;
    let paths = 100_000usize;
    let n = grid.len();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for hv in [0.55, 0.7, 0.9] {
        let gen = FbmGenerator::new(grid, h(hv), FbmMethod::Auto)?;
        let chunks = 20usize;
        let per = paths / chunks;
        let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut sum = vec![0.0; n * n];
                let mut sq = vec![0.0; n * n];
                for i in c * per..(c + 1) * per {
                    let p = gen.sample(SeedPolicy::new(1), i as u64);
                    let v = p.values();
                    for a in 1..n {
                        for b in a..n {
                            let x = v[a] * v[b];
                            sum[a * n + b] += x;
                            sq[a * n + b] += x * x;
                        }
                    }
                }
                (sum, sq)
            })
            .collect();
        let r = paths as f64;
        let mut local: f64 = 0.0;
        for a in 1..n {
            for b in a..n {
                let s: f64 = partial.iter().map(|p| p.0[a * n + b]).sum();
                let q: f64 = partial.iter().map(|p| p.1[a * n + b]).sum();
                let mean = s / r;
                let se = ((q / r - mean * mean) * r / (r - 1.0) / r).sqrt();
                let want = fbm_covariance(grid.time(a), grid.time(b), h(hv))?;
                local = local.max((mean - want).abs() / se);
            }
        }
        worst = worst.max(local);
        details.push(format!("H={hv}: max {local:.2} se"));
    }
    let elapsed = start.elapsed();
    let ok = worst < 4.0 && elapsed < Duration::from_secs(60);
    Ok((ok, format!("{}; {:.1}s", details.join(", "), elapsed.as_secs_f64())))
}

fn gls_smooth_pair() -> Outcome {
    let grid = TimeGrid::new(1.0, 1 << 12)?;
    let x = GridFunction::from_fn(grid, |t| t)?;
    let x2 = GridFunction::from_fn(grid, |t| t * t)?;
    let mut values = Vec::new();
    for a in [0.2, 0.5, 0.8] {
        values.push(gls_integral(&x, &x2, FractionalOrder::new(a)?)?);
    }
    let err = values.iter().map(|v| (v - 2.0 / 3.0).abs() * 1.5).fold(0.0, f64::max);
    let spread = values.iter().map(|v| (v - values[0]).abs() / values[0]).fold(0.0, f64::max);
    Ok((err < 1e-3 && spread < 1e-3, format!("max rel err {err:.2e}, alpha spread {spread:.2e}")))
}

/// Var(M^H_t)/t^{2−2H} from 10^5 replicates of the discretized martingale.
fn molchan_bracket() -> Outcome {
    let start = Instant::now();
    let grid = TimeGrid::new(1.0, 1 << 10)?;
    let reps = 100_000u64;
    let nodes = [256usize, 512, 1024];
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for hv in [0.6, 0.75] {
        let kernel = MolchanKernel::new(grid, h(hv));
        let gen = FbmGenerator::new(grid, h(hv), FbmMethod::Auto)?;
        let sums: Vec<[f64; 3]> = (0..reps)
            .into_par_iter()
            .map(|i| {
                let incr = gen.sample(SeedPolicy::new(2), i).increments();
                let mut out = [0.0; 3];
                for (slot, k) in out.iter_mut().zip(nodes) {
                    let m = kernel.integrate_increments_at(k, &incr);
                    *slot = m * m;
                }
                out
            })
            .collect();
        for (j, k) in nodes.iter().enumerate() {
            let t = grid.time(*k);
            let var = sums.iter().map(|s| s[j]).sum::<f64>() / reps as f64;
            let ratio = var / t.powf(2.0 - 2.0 * hv);
            worst = worst.max((ratio - 1.0).abs());
            details.push(format!("H={hv} t={t}: {ratio:.4}"));
        }
    }
    let elapsed = start.elapsed();
    let ok = worst <= 0.05 && elapsed < Duration::from_secs(300);
    Ok((ok, format!("{}; {:.1}s", details.join(", "), elapsed.as_secs_f64())))
}

fn checks_line(report: &ExperimentReport, prefix: &str) -> String {
    report
        .checks
        .iter()
        .filter(|c| c.name.starts_with(prefix))
        .map(|c| format!("{} {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

fn mse_law() -> Outcome {
    let cfg = config("mse.toml")?;
    let report = experiments::run(&cfg)?;
    let mut ok = report.passed && cfg.replicates == 10_000;
    for kind in [EstimatorKind::Mle, EstimatorKind::Ratio] {
        let row = report.row(Some(kind), 10.0).ok_or_else(|| anyhow::anyhow!("missing {kind} row"))?;
        let scaled = row.scaled_mse.unwrap_or(f64::NAN);
        ok &= (0.85..=1.15).contains(&scaled);
    }
    Ok((ok, checks_line(&report, "mse_law")))
}

fn sequential_identity() -> Outcome {
    let cfg = config("seq_mse.toml")?;
    let report = experiments::run(&cfg)?;
    let mut ok = report.passed && cfg.replicates == 10_000;
    let mut details = Vec::new();
    for level in [4.0, 16.0, 64.0] {
        let row = report
            .row(Some(EstimatorKind::SeqMle), level)
            .ok_or_else(|| anyhow::anyhow!("missing level {level}"))?;
        let within = (row.mean - cfg.model.theta).abs() <= 3.0 * row.stderr;
        let scaled = row.scaled_mse.unwrap_or(f64::NAN);
        ok &= within && (0.9..=1.1).contains(&scaled) && row.failures == 0;
        details.push(format!("h={level}: mean {:.4} ± {:.4}, MSE*h {scaled:.4}", row.mean, row.stderr));
    }
    Ok((ok, details.join("; ")))
}

fn consistency_trends() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for name in ["consistency_linear.toml", "consistency_mixed.toml", "consistency_ou.toml"] {
        let cfg = config(name)?;
        ok &= cfg.paired && cfg.replicates == 1000 && cfg.horizons == [5.0, 10.0, 20.0, 40.0];
        let report = experiments::run(&cfg)?;
        ok &= report.passed;
        for c in report.checks.iter().filter(|c| c.name.starts_with("median_abs_error_decreasing")) {
            ok &= c.passed;
            details.push(format!("{} {}", c.name.trim_start_matches("median_abs_error_decreasing:"), c.detail));
        }
    }
    Ok((ok, details.join("; ")))
}

fn moment_bound() -> Outcome {
    let cfg = MomentConfig::default();
    let report = verify_moment_bound(&cfg)?;
    let worst = report.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let ok = report.passed && report.rows.len() == 20 && cfg.replicates == 10_000;
    Ok((ok, format!("{} points, max rms/bound {worst:.3}, share below {}", report.rows.len(), report.share_below)))
}

fn gaus1_bound() -> Outcome {
    let report = verify_gaus1_bound(&Gaus1Config::new(h(0.7), FractionalOrder::new(0.4)?))?;
    let sup = report.levels.last().map(|l| l.sup).unwrap_or(f64::NAN);
    let change = report.levels.last().and_then(|l| l.change).unwrap_or(f64::NAN);
    Ok((
        report.passed,
        format!(
            "sup {sup:.6}, last change {change:.2e}, ratio limits {:.1e} / {:.4}, remainder limits {:.1e} / {:.1e}",
            report.limit_at_one, report.limit_at_infinity, report.remainder_limit_at_one, report.remainder_limit_at_infinity
        ),
    ))
}

fn growth_law() -> Outcome {
    let cfg = GrowthConfig::derivative(h(0.7), FractionalOrder::new(0.4)?);
    let report = verify_growth_law(&cfg)?;
    let ok = report.passed && cfg.replicates == 10_000 && cfg.horizons == [250.0, 500.0, 1000.0];
    Ok((
        ok,
        format!(
            "median spread {:.4}, control spread {:.3} (grows {}), tail slopes {:?}",
            report.median_spread,
            report.control_spread,
            report.control_grows,
            report.tail_slopes.iter().map(|s| (s * 1e3).round() / 1e3).collect::<Vec<_>>()
        ),
    ))
}

fn laplace_identity() -> Outcome {
    let cfg = config("ou_laplace.toml")?;
    let report = experiments::run(&cfg)?;
    let gaussian_ok = report.gaussian.len() >= 3
        && report.gaussian.iter().all(|g| g.within)
        && cfg.gaussian_draws == 1_000_000;
    let theta: Vec<f64> = [5.0, 10.0, 20.0]
        .iter()
        .map(|t| {
            report
                .rows
                .iter()
                .find(|r| r.horizon == Some(*t) && r.lambda == Some(1.0))
                .map(|r| r.mean)
                .unwrap_or(f64::NAN)
        })
        .collect();
    let decreasing = theta.windows(2).all(|w| w[1] < w[0]);
    let zs: Vec<String> = report.gaussian.iter().map(|g| format!("{:.2}", g.z)).collect();
    Ok((
        report.passed && gaussian_ok && decreasing,
        format!("Gaussian z-scores [{}]; Theta_T(1) = {theta:.4?}", zs.join(", ")),
    ))
}

fn fdrift(dir: &Path, args: &[&str]) -> anyhow::Result<std::process::Output> {
    Ok(Command::new(env!("CARGO_BIN_EXE_fdrift"))
        .args(args)
        .current_dir(dir)
        .env("FDRIFT_OUTPUT_DIR", dir)
        .output()?)
}

fn files(dir: &Path) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)?
        .map(|e| {
            let e = e?;
            Ok((e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path())?))
        })
        .collect::<anyhow::Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Two runs of every subcommand into separate directories produce identical
/// bytes; selftest exits 0 in under 10 minutes.
fn determinism() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let cfg = |name: &str| configs.join(name).to_string_lossy().into_owned();
    let (linear, laplace) = (cfg("consistency_linear.toml"), cfg("ou_laplace.toml"));
    let commands: Vec<Vec<String>> = [
        vec!["simulate", "--model", "ou", "--theta", "1", "--H", "0.7", "--T", "10", "--n", "4096", "--seed", "42", "--noise"],
        vec!["estimate", "--estimator", "mle", "--model", "linear", "--T", "10", "--n", "1000", "--seed", "5"],
        vec!["estimate", "--estimator", "seq_mle", "--h", "4", "--model", "linear", "--coef", "a=4", "--T", "1", "--n", "1000", "--seed", "5", "--output", "seq.json"],
        vec!["transform", "--op", "frac-forward", "--alpha", "0.4", "--input", "path.csv"],
        vec!["transform", "--op", "molchan", "--H", "0.7", "--input", "path.csv", "--output", "j.csv"],
        vec!["transform", "--op", "gls", "--alpha", "0.5", "--input", "path.csv", "--integrator", "path.bh.csv"],
        vec!["experiment", "--config", linear.as_str()],
        vec!["experiment", "--config", laplace.as_str(), "--replicates", "1000"],
        vec!["bound-check", "--what", "gaus1"],
        vec!["bound-check", "--what", "moment", "--replicates", "500"],
        vec!["bound-check", "--what", "growth", "--replicates", "50", "--horizons", "20,40"],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();

    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir()?;
        let mut stdout = Vec::new();
        for cmd in &commands {
            let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
            let out = fdrift(dir.path(), &args)?;
            // small-scale bound checks may legitimately report failed checks (exit 1)
            if !matches!(out.status.code(), Some(0 | 1)) {
                return Ok((false, format!("`{}` failed: {}", cmd.join(" "), String::from_utf8_lossy(&out.stderr))));
            }
            stdout.push(format!("exit {:?}", out.status.code()));
            // the experiment summary line carries a wall-clock time
            let text = String::from_utf8_lossy(&out.stdout);
            let text = text.replace(&*dir.path().to_string_lossy(), "<dir>");
            stdout.push(text.lines().filter(|l| !l.contains(" in ")).collect::<Vec<_>>().join("\n"));
        }
        snapshots.push((files(dir.path())?, stdout));
    }
    let same_files = snapshots[0].0 == snapshots[1].0;
    let same_stdout = snapshots[0].1 == snapshots[1].1;
    let file_count = snapshots[0].0.len();

    let start = Instant::now();
    let dir = tempfile::tempdir()?;
    let selftest = fdrift(dir.path(), &["selftest"])?;
    let elapsed = start.elapsed();
    let self_ok = selftest.status.success() && elapsed < Duration::from_secs(600);
    Ok((
        same_files && same_stdout && self_ok,
        format!(
            "{} commands, {file_count} files byte-identical: {same_files}, stdout identical: {same_stdout}; selftest exit {:?} in {:.1}s",
            commands.len(),
            selftest.status.code(),
            elapsed.as_secs_f64()
        ),
    ))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "fbm exactness", fbm_exactness),
    (2, "gls integral on smooth pairs", gls_smooth_pair),
    (3, "molchan bracket", molchan_bracket),
    (4, "mle and ratio mse law", mse_law),
    (5, "sequential identity", sequential_identity),
    (6, "consistency trends", consistency_trends),
    (7, "moment bound", moment_bound),
    (8, "gaussian increment bound", gaus1_bound),
    (9, "growth law", growth_law),
    (10, "gaussian laplace identity and ou laplace", laplace_identity),
    (11, "determinism and selftest", determinism),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let start = Instant::now();
    for (id, name, run) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let (passed, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        println!(
            "criterion {id:>2} {} {name} ({:.1}s): {detail}",
            if passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if !passed {
            failed.push(*id);
        }
    }
    println!("acceptance: {} failed {failed:?}, {:.1}s total", failed.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
