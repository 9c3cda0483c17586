//! Analytic-oracle checks run by `fdrift selftest`.

use serde::Serialize;

use crate::error::Result;
use crate::estimators::{
    estimate_mixed, estimate_mle, estimate_ou_modified, estimate_ratio, estimate_seq_mle_with, ChiMethod, MleWeights,
    Observation,
};
use crate::experiments::gaussian_square_laplace;
use crate::frac::{frac_deriv_forward, gls_integral, FractionalOrder};
use crate::gauss::{fbm_covariance, FbmGenerator, FbmMethod, HurstIndex};
use crate::grid::{GridFunction, PathMeta, SamplePath, TimeGrid};
use crate::growth::{frac_deriv_process, lemma_gaus1_quantity, verify_gaus1_bound, Gaus1Config, TwoTimePoint};
use crate::molchan::{bracket_increments, molchan_transform, MolchanConstants};
use crate::sde::{solve_euler, ModelConfig, ModelKind, TimeFunction};
use crate::seed::SeedPolicy;
use crate::special::gamma;

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<(bool, String)>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn h(v: f64) -> HurstIndex {
    HurstIndex::new(v).expect("valid Hurst index")
}

fn order(v: f64) -> FractionalOrder {
    FractionalOrder::new(v).expect("valid order")
}

fn covariance_closed_forms() -> Outcome {
    let t: f64 = 1.7;
    let diag = rel(fbm_covariance(t, t, h(0.3))?, t.powf(0.6));
    let bm = (fbm_covariance(0.4, 1.3, h(0.5))? - 0.4).abs();
    Ok((diag < 1e-14 && bm < 1e-15, format!("diagonal rel err {diag:e}, H = 1/2 err {bm:e}")))
}

/// Entrywise sample covariance within 5 standard errors for both exact methods.
fn fbm_sample_covariance() -> Outcome {
    let grid = TimeGrid::new(1.0, 16)?;
    let paths = 20_000;
    let mut worst: f64 = 0.0;
    for method in [FbmMethod::Cholesky, FbmMethod::Circulant] {
        for hv in [0.3, 0.7] {
            let gen = FbmGenerator::new(grid, h(hv), method)?;
            let n = grid.len();
            let mut sum = vec![0.0; n * n];
            let mut sum_sq = vec![0.0; n * n];
            for i in 0..paths {
                let p = gen.sample(SeedPolicy::new(11), i as u64);
                let v = p.values();
                for a in 1..n {
                    for b in a..n {
                        let x = v[a] * v[b];
                        sum[a * n + b] += x;
                        sum_sq[a * n + b] += x * x;
                    }
                }
            }
            let r = paths as f64;
            for a in 1..n {
                for b in a..n {
                    let mean = sum[a * n + b] / r;
                    let var = (sum_sq[a * n + b] / r - mean * mean) * r / (r - 1.0);
                    let want = fbm_covariance(grid.time(a), grid.time(b), h(hv))?;
                    worst = worst.max((mean - want).abs() / (var / r).sqrt());
                }
            }
        }
    }
    Ok((worst < 5.0, format!("largest deviation {worst:.2} standard errors")))
}

fn derivative_of_constant() -> Outcome {
    let grid = TimeGrid::new(2.0, 64)?;
    let d = frac_deriv_forward(&GridFunction::constant(grid, 3.0), order(0.4), 0.0)?;
    let mut worst: f64 = 0.0;
    for k in 1..=64 {
        let want = 3.0 * grid.time(k).powf(-0.4) / gamma(0.6);
        worst = worst.max(rel(d.get(k).unwrap_or(f64::NAN), want));
    }
    Ok((worst < 1e-12, format!("max rel err {worst:e}")))
}

fn derivative_of_identity() -> Outcome {
    let grid = TimeGrid::new(1.0, 100)?;
    let d = frac_deriv_forward(&GridFunction::from_fn(grid, |x| x)?, order(0.3), 0.0)?;
    let err = rel(d.get(100).unwrap_or(f64::NAN), 1.0 / gamma(1.7));
    Ok((err < 1e-12, format!("rel err {err:e}")))
}

fn gls_smooth_pair() -> Outcome {
    let grid = TimeGrid::new(1.0, 1 << 12)?;
    let x = GridFunction::from_fn(grid, |t| t)?;
    let x2 = GridFunction::from_fn(grid, |t| t * t)?;
    let values: Vec<f64> = [0.2, 0.5, 0.8]
        .into_iter()
        .map(|a| gls_integral(&x, &x2, order(a)))
        .collect::<Result<_>>()?;
    let worst = values.iter().map(|v| rel(*v, 2.0 / 3.0)).fold(0.0, f64::max);
    let spread = values.iter().map(|v| rel(*v, values[1])).fold(0.0, f64::max);
    Ok((worst < 1e-3 && spread < 1e-3, format!("values {values:?}, alpha spread {spread:e}")))
}

fn molchan_transform_of_constant() -> Outcome {
    let mut worst: f64 = 0.0;
    for hv in [0.6, 0.75, 0.9] {
        let grid = TimeGrid::new(3.0, 500)?;
        let big_c = MolchanConstants::new(h(hv)).big_c_h;
        let j = molchan_transform(&GridFunction::constant(grid, 1.0), h(hv))?;
        for k in [1, 250, 500] {
            worst = worst.max(rel(j.values()[k], big_c * grid.time(k).powf(2.0 - 2.0 * hv)));
        }
    }
    Ok((worst < 1e-10, format!("max rel err {worst:e}")))
}

fn bracket_total() -> Outcome {
    let grid = TimeGrid::new(2.5, 1000)?;
    let total: f64 = bracket_increments(&grid, h(0.7)).iter().sum();
    let err = rel(total, 2.5f64.powf(0.6));
    Ok((err < 1e-12, format!("rel err {err:e}")))
}

fn constant(v: f64) -> TimeFunction {
    TimeFunction::constant(v)
}

fn model(kind: ModelKind, theta: f64) -> ModelConfig {
    ModelConfig {
        kind,
        theta,
        x0: 1.0,
        hurst: h(0.7),
    }
}

fn noiseless(cfg: &ModelConfig, grid: TimeGrid) -> Result<SamplePath> {
    let zero = SamplePath::zeros(grid);
    solve_euler(&cfg.instance()?, grid, &zero, &zero)
}

/// Every estimator returns `θ` on a path without noise.
fn zero_noise_estimates() -> Outcome {
    let grid = TimeGrid::new(5.0, 500)?;
    let theta = 0.8;
    let linear = model(ModelKind::Linear { a: constant(1.5), b: constant(0.5) }, theta);
    let mixed = model(
        ModelKind::MixedLinear {
            a: constant(1.0),
            b: constant(1.0),
            c: constant(1.0),
        },
        theta,
    );
    let ou = model(ModelKind::preset("ou")?, theta);
    let mut worst: f64 = 0.0;
    let x = noiseless(&linear, grid)?;
    let coeffs = linear.instance()?.coeffs;
    for est in [
        estimate_mle(&Observation::path(&x), &coeffs, linear.hurst, ChiMethod::Closed)?,
        estimate_ratio(&Observation::path(&x), &coeffs)?,
    ] {
        worst = worst.max(rel(est.estimate, theta));
    }
    let x = noiseless(&mixed, grid)?;
    worst = worst.max(rel(estimate_mixed(&Observation::path(&x), &mixed.instance()?.coeffs)?.estimate, theta));
    let x = noiseless(&ou, grid)?;
    worst = worst.max(rel(estimate_ou_modified(&Observation::path(&x), theta)?.estimate, theta));
    Ok((worst < 1e-9, format!("max rel err {worst:e}")))
}

/// With constant `φ` the stopping time solves `(φ C_H)² τ^{2−2H} = h`.
fn sequential_stopping_root() -> Outcome {
    let (phi, hv, level) = (4.0, 0.7, 4.0);
    let grid = TimeGrid::new(1.0, 1000)?;
    let cfg = model(ModelKind::Linear { a: constant(phi), b: constant(1.0) }, 0.5);
    let coeffs = cfg.instance()?.coeffs;
    let weights = MleWeights::new(grid, cfg.hurst, &coeffs, ChiMethod::Closed)?;
    let x = noiseless(&cfg, grid)?;
    let (est, stop) = estimate_seq_mle_with(&weights, &Observation::path(&x), &coeffs, level)?;
    let chi = phi * MolchanConstants::new(h(hv)).big_c_h;
    let root = (level / (chi * chi)).powf(1.0 / (2.0 - 2.0 * hv));
    let ok = (stop.time - root).abs() <= grid.dt() && rel(est.denominator, level) < 1e-12 && rel(est.estimate, 0.5) < 1e-9;
    Ok((ok, format!("tau {:.6} vs root {root:.6}, estimate {}", stop.time, est.estimate)))
}

fn gaussian_laplace_plug_ins() -> Outcome {
    let a0 = gaussian_square_laplace(3.0, 2.0, 0.0)?;
    let half = gaussian_square_laplace(0.0, 1.0, 0.5)?;
    let err = (half - 0.5f64.sqrt()).abs();
    let rejects = gaussian_square_laplace(0.0, 1.0, -1.0).is_err();
    Ok((a0 == 1.0 && err < 1e-15 && rejects, format!("a = 0 gives {a0}, m = 0 gives err {err:e}")))
}

fn identity_path_process() -> Outcome {
    let grid = TimeGrid::new(4.0, 400)?;
    let path = SamplePath::new(grid, grid.times().collect(), PathMeta::tagged("identity"))?;
    let mut worst: f64 = 0.0;
    for (t1, t2, a) in [(1.0, 0.0, 0.4), (3.337, 1.2345, 0.6)] {
        let x = frac_deriv_process(&path, TwoTimePoint { t1, t2 }, order(a))?;
        let d: f64 = t1 - t2;
        worst = worst.max(rel(x, d.powf(a) * (1.0 + 1.0 / a)));
    }
    Ok((worst < 1e-12, format!("max rel err {worst:e}")))
}

fn gaus1_study() -> Outcome {
    let pin = lemma_gaus1_quantity(1.0, 2.0, h(0.7), order(0.4))?;
    let report = verify_gaus1_bound(&Gaus1Config::new(h(0.7), order(0.4)))?;
    let sup = report.levels.last().map(|l| l.sup).unwrap_or(f64::NAN);
    let ok = (pin - 0.407_597_228_404_786_7).abs() < 1e-12 && report.passed;
    Ok((ok, format!("I(1,2) = {pin}, sup = {sup}, limits reproduced {}", report.limits_reproduced)))
}

type Oracle = (&'static str, fn() -> Outcome);

const ORACLES: &[Oracle] = &[
    ("fbm_covariance_closed_forms", covariance_closed_forms),
    ("fbm_sample_covariance", fbm_sample_covariance),
    ("frac_derivative_of_constant", derivative_of_constant),
    ("frac_derivative_of_identity", derivative_of_identity),
    ("gls_integral_smooth_pair", gls_smooth_pair),
    ("molchan_transform_of_constant", molchan_transform_of_constant),
    ("molchan_bracket_total", bracket_total),
    ("zero_noise_estimates", zero_noise_estimates),
    ("sequential_stopping_root", sequential_stopping_root),
    ("gaussian_laplace_plug_ins", gaussian_laplace_plug_ins),
    ("frac_process_of_identity_path", identity_path_process),
    ("gaus1_grid_study", gaus1_study),
];

/// Runs every oracle; `on_result` sees each outcome as it completes.
pub fn run_with(mut on_result: impl FnMut(&OracleCheck)) -> Vec<OracleCheck> {
    ORACLES
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = match check() {
                Ok(v) => v,
                Err(e) => (false, format!("error: {e}")),
            };
            let out = OracleCheck { name, passed, detail };
            on_result(&out);
            out
        })
        .collect()
}

pub fn run() -> Vec<OracleCheck> {
    run_with(|_| {})
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_oracles_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
