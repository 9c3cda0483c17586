//! Monte Carlo experiments: configuration, replicate execution and reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_mixed, estimate_mle_with, estimate_ou_modified, estimate_ratio, estimate_seq_mle_prepared,
    estimate_sequential, ChiMethod, EstimatorKind, MleWeights, Observation, SequentialKind, SequentialWeights,
};
use crate::gauss::PairGenerator;
use crate::grid::{SamplePath, TimeGrid};
use crate::io;
use crate::molchan::{bracket_increments, j_prime, JPrimeMethod, MolchanConstants, MolchanKernel};
use crate::sde::{solve_euler, ModelConfig, ModelInstance, ModelKind, TimeFunction};
use crate::seed::{SeedPolicy, Stream, DERIVATION_RULE};
use crate::stats::{self, Summary};

pub const SCHEMA_VERSION: u32 = 1;

/// Share of failed replicates above which a row fails.
pub const FAILURE_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consistency,
    Mse,
    Sequential,
    OuLaplace,
}

/// How sample paths are produced from the driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathScheme {
    #[default]
    Euler,
    Exact,
}

/// `(m, σ², a)` for the Gaussian Laplace check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTriple {
    pub m: f64,
    pub sigma2: f64,
    pub a: f64,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_name() -> String {
    "experiment".into()
}

fn yes() -> bool {
    true
}

fn default_draws() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub kind: ExperimentKind,
    pub model: ModelConfig,
    #[serde(default)]
    pub estimators: Vec<EstimatorKind>,
    /// Horizon sweep (consistency, mse, ou_laplace).
    #[serde(default)]
    pub horizons: Vec<f64>,
    /// Level sweep (sequential).
    #[serde(default)]
    pub levels: Vec<f64>,
    /// Simulation horizon of sequential runs, extended once by 4x on a miss.
    #[serde(default)]
    pub max_horizon: Option<f64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    pub replicates: usize,
    /// Grid step; every horizon uses `n = T/dt`.
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub chi_method: ChiMethod,
    /// Weight exponent of `OU_MODIFIED`; defaults to the model's `θ`.
    #[serde(default)]
    pub theta_weight: Option<f64>,
    /// Same driving noise across the sweep (paths truncated to each horizon).
    #[serde(default = "yes")]
    pub paired: bool,
    #[serde(default)]
    pub scheme: PathScheme,
    #[serde(default)]
    pub gaussian: Vec<GaussianTriple>,
    #[serde(default = "default_draws")]
    pub gaussian_draws: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        self.model.validate()?;
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let check_horizon = |t: f64| -> Result<()> {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("horizon {t} must be positive"));
            }
            steps_for(t, self.dt).map(|_| ())
        };
        match self.kind {
            ExperimentKind::Consistency | ExperimentKind::Mse | ExperimentKind::OuLaplace => {
                if self.horizons.is_empty() {
                    return bad("horizons must not be empty".into());
                }
                for t in &self.horizons {
                    check_horizon(*t)?;
                }
                if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("horizons must be strictly increasing".into());
                }
            }
            ExperimentKind::Sequential => {
                if self.levels.is_empty() || self.levels.iter().any(|h| !(*h > 0.0)) {
                    return bad("levels must be positive and nonempty".into());
                }
                if self.levels.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("levels must be strictly increasing".into());
                }
                match self.max_horizon {
                    Some(t) => check_horizon(t)?,
                    None => return bad("sequential experiments need max_horizon".into()),
                }
            }
        }
        match self.kind {
            ExperimentKind::Consistency | ExperimentKind::Mse => {
                if self.estimators.is_empty() {
                    return bad("estimators must not be empty".into());
                }
                if let Some(k) = self.estimators.iter().find(|k| k.is_sequential()) {
                    return bad(format!("{k} belongs in a sequential experiment"));
                }
            }
            ExperimentKind::Sequential => {
                if let Some(k) = self.estimators.iter().find(|k| !k.is_sequential()) {
                    return bad(format!("{k} is not a sequential estimator"));
                }
            }
            ExperimentKind::OuLaplace => {
                if !matches!(self.model.kind, ModelKind::Ou { .. }) {
                    return bad("ou_laplace needs an `ou` model".into());
                }
                if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0)) {
                    return bad("lambdas must be nonnegative and nonempty".into());
                }
                for g in &self.gaussian {
                    if g.a < 0.0 || g.sigma2 < 0.0 {
                        return bad("gaussian triples need a >= 0 and sigma2 >= 0".into());
                    }
                }
            }
        }
        Ok(())
    }

    fn estimator_list(&self) -> Vec<EstimatorKind> {
        if self.kind == ExperimentKind::Sequential && self.estimators.is_empty() {
            vec![EstimatorKind::SeqMle]
        } else {
            self.estimators.clone()
        }
    }
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    let raw = horizon / dt;
    let n = raw.round();
    if (raw - n).abs() > 1e-9 * raw.max(1.0) || n < 2.0 {
        return Err(Error::Config(format!(
            "horizon {horizon} is not a multiple of dt = {dt} with at least 2 steps"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Replicates attempted; `failures` of them produced no value.
    pub replicates: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
    pub mean: f64,
    pub stderr: f64,
    /// Quantiles of the value at 5, 25, 50, 75 and 95%.
    pub quantiles: [f64; 5],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_abs_error: Option<f64>,
    /// Analytic MSE where the model has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mse: Option<f64>,
    /// `mse / reference_mse`; for sequential rows this is `MSE·h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled_mse: Option<f64>,
    /// `bias / stderr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_statistic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping_time: Option<Summary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianCheck {
    pub triple: GaussianTriple,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub stderr: f64,
    /// `(monte_carlo − closed_form)/stderr`.
    pub z: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    pub code_version: String,
    pub seed_rule: String,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaussian: Vec<GaussianCheck>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ExperimentReport {
    fn new(cfg: &ExperimentConfig, rows: Vec<ReportRow>, gaussian: Vec<GaussianCheck>, mut checks: Vec<Check>) -> Self {
        for r in &rows {
            let share = r.failures as f64 / r.replicates.max(1) as f64;
            if share > FAILURE_LIMIT {
                checks.push(Check::new(
                    format!("failures:{}", row_label(r)),
                    false,
                    format!("{} of {} replicates failed: {}", r.failures, r.replicates, r.first_failure.clone().unwrap_or_default()),
                ));
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            name: cfg.name.clone(),
            kind: cfg.kind,
            code_version: format!("fdrift-core {}", env!("CARGO_PKG_VERSION")),
            seed_rule: DERIVATION_RULE.into(),
            config: cfg.clone(),
            passed: checks.iter().all(|c| c.passed),
            rows,
            gaussian,
            checks,
        }
    }

    pub fn row(&self, estimator: Option<EstimatorKind>, key: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.estimator == estimator && (r.horizon == Some(key) || r.level == Some(key))
        })
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "estimator", "horizon", "level", "lambda", "replicates", "failures", "mean", "stderr", "q05", "q25",
            "q50", "q75", "q95", "bias", "mse", "mse_stderr", "median_abs_error", "reference_mse", "scaled_mse",
            "t_statistic", "stopping_time_mean",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.estimator.map(|k| k.tag().to_string()).unwrap_or_default(),
                opt(r.horizon),
                opt(r.level),
                opt(r.lambda),
                r.replicates.to_string(),
                r.failures.to_string(),
                r.mean.to_string(),
                r.stderr.to_string(),
            ];
            rec.extend(r.quantiles.iter().map(|q| q.to_string()));
            rec.extend([
                opt(r.bias),
                opt(r.mse),
                opt(r.mse_stderr),
                opt(r.median_abs_error),
                opt(r.reference_mse),
                opt(r.scaled_mse),
                opt(r.t_statistic),
                opt(r.stopping_time.as_ref().map(|s| s.mean)),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<name>.json` and `<name>.csv` under `dir`; returns both paths.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let json = dir.join(format!("{}.json", self.name));
        let csv_path = dir.join(format!("{}.csv", self.name));
        io::write_json(&json, self)?;
        io::atomic_write_with(&csv_path, |buf| self.write_csv(buf))?;
        Ok((json, csv_path))
    }
}

fn row_label(r: &ReportRow) -> String {
    let mut s = r.estimator.map(|k| k.tag().to_string()).unwrap_or_else(|| "value".into());
    if let Some(t) = r.horizon {
        s += &format!("@T={t}");
    }
    if let Some(h) = r.level {
        s += &format!("@h={h}");
    }
    if let Some(l) = r.lambda {
        s += &format!("@lambda={l}");
    }
    s
}

/// Outcome of one replicate for one row.
type Cell = std::result::Result<f64, String>;

struct Collected {
    values: Vec<f64>,
    failures: usize,
    first_failure: Option<String>,
}

fn collect(cells: impl Iterator<Item = Cell>) -> Collected {
    let mut out = Collected {
        values: Vec::new(),
        failures: 0,
        first_failure: None,
    };
    for c in cells {
        match c {
            Ok(v) => out.values.push(v),
            Err(e) => {
                out.failures += 1;
                out.first_failure.get_or_insert(e);
            }
        }
    }
    out
}

fn estimate_row(estimator: Option<EstimatorKind>, theta: f64, c: &Collected) -> ReportRow {
    let summary = Summary::of(&c.values);
    let errors: Vec<f64> = c.values.iter().map(|v| v - theta).collect();
    let squares: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let bias = stats::mean(&errors);
    ReportRow {
        estimator,
        horizon: None,
        level: None,
        lambda: None,
        replicates: c.values.len() + c.failures,
        failures: c.failures,
        first_failure: c.first_failure.clone(),
        mean: summary.mean,
        stderr: summary.stderr,
        quantiles: summary.quantiles,
        bias: Some(bias),
        mse: Some(stats::mean(&squares)),
        mse_stderr: Some(stats::stderr(&squares)),
        median_abs_error: Some(stats::median(&abs)),
        reference_mse: None,
        scaled_mse: None,
        t_statistic: Some(bias / summary.stderr),
        stopping_time: None,
    }
}

/// Path simulation shared by all experiments.
struct Simulator {
    model: ModelConfig,
    instance: ModelInstance,
    scheme: PathScheme,
    seed: SeedPolicy,
}

struct Replicate {
    x: SamplePath,
    w: SamplePath,
    bh: SamplePath,
}

impl Replicate {
    fn truncate(&self, steps: usize) -> Result<Self> {
        Ok(Self {
            x: self.x.truncate(steps)?,
            w: self.w.truncate(steps)?,
            bh: self.bh.truncate(steps)?,
        })
    }

    fn observation(&self) -> Observation<'_> {
        Observation::with_noise(&self.x, &self.w, &self.bh)
    }
}

impl Simulator {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            model: cfg.model.clone(),
            instance: cfg.model.instance()?,
            scheme: cfg.scheme,
            seed: SeedPolicy::new(cfg.seed),
        })
    }

    fn generator(&self, grid: TimeGrid) -> Result<PairGenerator> {
        PairGenerator::new(grid, self.model.hurst)
    }

    fn replicate(&self, generator: &PairGenerator, index: u64) -> Result<Replicate> {
        let (w, bh) = generator.sample(self.seed, index);
        let grid = *bh.grid();
        let x = match self.scheme {
            PathScheme::Euler => solve_euler(&self.instance, grid, &w, &bh)?,
            PathScheme::Exact => self.model.exact_solution(grid, &w, &bh)?,
        };
        Ok(Replicate { x, w, bh })
    }

    /// Path driven by zero noise.
    fn noiseless(&self, grid: TimeGrid) -> Result<Replicate> {
        let (w, bh) = (SamplePath::zeros(grid), SamplePath::zeros(grid));
        let x = match self.scheme {
            PathScheme::Euler => solve_euler(&self.instance, grid, &w, &bh)?,
            PathScheme::Exact => self.model.exact_solution(grid, &w, &bh)?,
        };
        Ok(Replicate { x, w, bh })
    }
}

/// Per-horizon state of a fixed-horizon estimator.
enum Prepared {
    Mle(Box<MleWeights>),
    Ratio,
    Mixed,
    OuModified(f64),
}

impl Prepared {
    fn new(kind: EstimatorKind, grid: TimeGrid, cfg: &ExperimentConfig, sim: &Simulator) -> Result<Self> {
        Ok(match kind {
            EstimatorKind::Mle => Prepared::Mle(Box::new(MleWeights::new(
                grid,
                cfg.model.hurst,
                &sim.instance.coeffs,
                cfg.chi_method,
            )?)),
            EstimatorKind::Ratio => Prepared::Ratio,
            EstimatorKind::Mixed => Prepared::Mixed,
            EstimatorKind::OuModified => Prepared::OuModified(cfg.theta_weight.unwrap_or(cfg.model.theta)),
            other => return Err(Error::Config(format!("{other} is not a fixed-horizon estimator"))),
        })
    }

    fn estimate(&self, obs: &Observation, sim: &Simulator) -> Result<f64> {
        let coeffs = &sim.instance.coeffs;
        let out = match self {
            Prepared::Mle(w) => estimate_mle_with(w, obs, coeffs)?,
            Prepared::Ratio => estimate_ratio(obs, coeffs)?,
            Prepared::Mixed => estimate_mixed(obs, coeffs)?,
            Prepared::OuModified(weight) => estimate_ou_modified(obs, *weight)?,
        };
        Ok(out.estimate)
    }
}

/// `(b/a)²` when both coefficients of a linear model are constant.
fn linear_constant_ratio(model: &ModelConfig) -> Option<f64> {
    match &model.kind {
        ModelKind::Linear {
            a: TimeFunction::Constant { value: a },
            b: TimeFunction::Constant { value: b },
        } => Some((b / a).powi(2)),
        _ => None,
    }
}

/// `E(θ̂ − θ)²` of the linear constant model: `(b/a)² T^{2H−2}`, divided by
/// `C_H²` for the maximum likelihood estimator.
pub fn linear_reference_mse(model: &ModelConfig, estimator: EstimatorKind, horizon: f64) -> Option<f64> {
    let ratio = linear_constant_ratio(model)?;
    let h = model.hurst.value();
    let base = ratio * horizon.powf(2.0 * h - 2.0);
    match estimator {
        EstimatorKind::Ratio => Some(base),
        EstimatorKind::Mle => Some(base / MolchanConstants::new(model.hurst).big_c_h.powi(2)),
        _ => None,
    }
}

/// Fixed-horizon sweep shared by `run_consistency` and `run_mse`.
fn horizon_sweep(cfg: &ExperimentConfig) -> Result<(Vec<ReportRow>, Simulator)> {
    cfg.validate()?;
    let sim = Simulator::new(cfg)?;
    let estimators = cfg.estimator_list();
    let grids: Vec<TimeGrid> = cfg
        .horizons
        .iter()
        .map(|t| TimeGrid::new(*t, steps_for(*t, cfg.dt)?))
        .collect::<Result<_>>()?;
    let prepared: Vec<Vec<Prepared>> = grids
        .iter()
        .map(|g| estimators.iter().map(|k| Prepared::new(*k, *g, cfg, &sim)).collect())
        .collect::<Result<_>>()?;
    let longest = *grids.last().expect("validated");
    let paired_gen = if cfg.paired { Some(sim.generator(longest)?) } else { None };
    let own_gens: Vec<PairGenerator> = if cfg.paired {
        Vec::new()
    } else {
        grids.iter().map(|g| sim.generator(*g)).collect::<Result<_>>()?
    };
    let r = cfg.replicates as u64;

    // cells[i][h * E + e]
    let cells: Vec<Vec<Cell>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(grids.len() * estimators.len());
            let long = paired_gen.as_ref().map(|g| sim.replicate(g, i));
            for (h, grid) in grids.iter().enumerate() {
                let rep = match &long {
                    Some(Ok(rep)) => rep.truncate(grid.steps()),
                    Some(Err(e)) => Err(Error::Domain(e.to_string())),
                    None => sim.replicate(&own_gens[h], i + h as u64 * r),
                };
                for p in &prepared[h] {
                    out.push(
                        rep.as_ref()
                            .map_err(|e| e.to_string())
                            .and_then(|rep| p.estimate(&rep.observation(), &sim).map_err(|e| e.to_string())),
                    );
                }
            }
            out
        })
        .collect();

    let mut rows = Vec::new();
    for (h, t) in cfg.horizons.iter().enumerate() {
        for (e, kind) in estimators.iter().enumerate() {
            let c = collect(cells.iter().map(|row| row[h * estimators.len() + e].clone()));
            let mut row = estimate_row(Some(*kind), cfg.model.theta, &c);
            row.horizon = Some(*t);
            if let Some(reference) = linear_reference_mse(&cfg.model, *kind, *t) {
                row.reference_mse = Some(reference);
                row.scaled_mse = row.mse.map(|m| m / reference);
            }
            rows.push(row);
        }
    }
    Ok((rows, sim))
}

/// Estimates on a noiseless path at the longest horizon; each should equal `θ`.
fn zero_noise_checks(cfg: &ExperimentConfig, sim: &Simulator) -> Result<Vec<Check>> {
    let t = *cfg.horizons.last().expect("validated");
    let grid = TimeGrid::new(t, steps_for(t, cfg.dt)?)?;
    let rep = sim.noiseless(grid)?;
    let theta = cfg.model.theta;
    let mut checks = Vec::new();
    for kind in cfg.estimator_list() {
        if kind == EstimatorKind::Mle && cfg.chi_method == ChiMethod::Numeric {
            continue;
        }
        if kind == EstimatorKind::OuModified && cfg.theta_weight.is_some_and(|w| w != theta) {
            continue;
        }
        let p = Prepared::new(kind, grid, cfg, sim)?;
        let check = match p.estimate(&Observation::path(&rep.x), sim) {
            Ok(v) => {
                let err = (v - theta).abs();
                Check::new(
                    format!("zero_noise:{kind}"),
                    err <= 1e-9 * theta.abs().max(1.0),
                    format!("|estimate - theta| = {err:e} on a noiseless path"),
                )
            }
            // x0 = 0 with additive noise removed gives a zero path and no information
            Err(e) => Check::new(format!("zero_noise:{kind}"), true, format!("not identifiable without noise: {e}")),
        };
        checks.push(check);
    }
    Ok(checks)
}

/// Error quantiles per horizon; the median absolute error must decrease
/// strictly along the sweep for every estimator.
pub fn run_consistency(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (rows, sim) = horizon_sweep(cfg)?;
    let mut checks = Vec::new();
    for kind in cfg.estimator_list() {
        let medians: Vec<f64> = rows
            .iter()
            .filter(|r| r.estimator == Some(kind))
            .map(|r| r.median_abs_error.unwrap_or(f64::NAN))
            .collect();
        checks.push(Check::new(
            format!("median_abs_error_decreasing:{kind}"),
            medians.windows(2).all(|w| w[1] < w[0]),
            format!("medians {medians:?}"),
        ));
    }
    checks.extend(zero_noise_checks(cfg, &sim)?);
    Ok(ExperimentReport::new(cfg, rows, Vec::new(), checks))
}

/// Band for `MSE / analytic MSE`.
pub const MSE_BAND: (f64, f64) = (0.85, 1.15);

/// Monte Carlo MSE per horizon against the analytic law when one exists.
pub fn run_mse(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (rows, sim) = horizon_sweep(cfg)?;
    let mut checks = Vec::new();
    let mut worst: Option<f64> = None;
    for r in &rows {
        if let Some(scaled) = r.scaled_mse {
            worst = Some(worst.unwrap_or(0.0).max((scaled - 1.0).abs()));
            checks.push(Check::new(
                format!("mse_law:{}", row_label(r)),
                (MSE_BAND.0..=MSE_BAND.1).contains(&scaled),
                format!("MSE / analytic = {scaled:.4} (stderr {:.4})", r.mse_stderr.unwrap_or(f64::NAN) / r.reference_mse.unwrap_or(f64::NAN)),
            ));
        }
    }
    if let Some(w) = worst {
        checks.push(Check::new("mse_max_relative_deviation", w <= MSE_BAND.1 - 1.0, format!("{w:.4}")));
    }
    for kind in cfg.estimator_list() {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.estimator == Some(kind))
            .filter_map(|r| Some((r.horizon?.ln(), r.mse?.ln())))
            .collect();
        if pts.len() >= 2 {
            let slope = fitted_slope(&pts);
            let expected = 2.0 * cfg.model.hurst.value() - 2.0;
            checks.push(Check::new(
                format!("mse_exponent:{kind}"),
                true,
                format!("fitted log-log slope {slope:.4}, law {expected:.4}"),
            ));
        }
    }
    checks.extend(zero_noise_checks(cfg, &sim)?);
    Ok(ExperimentReport::new(cfg, rows, Vec::new(), checks))
}

fn fitted_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Band for `MSE·h` of `SEQ_MLE`.
pub const SEQUENTIAL_BAND: (f64, f64) = (0.9, 1.1);

/// Growth factor of the horizon when a level is missed.
pub const EXTENSION_FACTOR: usize = 4;

struct SequentialPlan {
    grid: TimeGrid,
    generator: PairGenerator,
    weights: OnceLock<Result<(MleWeights, Vec<Result<SequentialWeights>>)>>,
}

impl SequentialPlan {
    fn new(grid: TimeGrid, sim: &Simulator) -> Result<Self> {
        Ok(Self {
            grid,
            generator: sim.generator(grid)?,
            weights: OnceLock::new(),
        })
    }

    fn mle(&self, cfg: &ExperimentConfig, sim: &Simulator) -> std::result::Result<&(MleWeights, Vec<Result<SequentialWeights>>), String> {
        self.weights
            .get_or_init(|| {
                let w = MleWeights::new(self.grid, cfg.model.hurst, &sim.instance.coeffs, cfg.chi_method)?;
                let seq = cfg.levels.iter().map(|h| w.sequential(*h)).collect();
                Ok((w, seq))
            })
            .as_ref()
            .map_err(|e| e.to_string())
    }
}

/// Per level: mean and its t-statistic, MSE against `1/h`, and the realized
/// stopping times. A replicate missing a level is rerun once on a horizon
/// four times longer, then counted as a failure.
pub fn run_sequential(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sim = Simulator::new(cfg)?;
    let estimators = cfg.estimator_list();
    let t = cfg.max_horizon.expect("validated");
    let base = TimeGrid::new(t, steps_for(t, cfg.dt)?)?;
    let extended = TimeGrid::new(t * EXTENSION_FACTOR as f64, base.steps() * EXTENSION_FACTOR)?;
    let plans = [SequentialPlan::new(base, &sim)?, SequentialPlan::new(extended, &sim)?];
    let r = cfg.replicates as u64;
    let levels = cfg.levels.len();

    let run_one = |plan: &SequentialPlan, rep: &Replicate, kind: EstimatorKind, level_idx: usize| -> std::result::Result<(f64, f64), (bool, String)> {
        let level = cfg.levels[level_idx];
        let obs = rep.observation();
        let coeffs = &sim.instance.coeffs;
        let result = match kind {
            EstimatorKind::SeqMle => {
                let (w, seq) = plan.mle(cfg, &sim).map_err(|e| (false, e))?;
                match &seq[level_idx] {
                    Ok(s) => estimate_seq_mle_prepared(w, s, &obs, coeffs),
                    Err(e) => return Err((matches!(e, Error::NotHit { .. }), e.to_string())),
                }
            }
            EstimatorKind::SeqRatio => estimate_sequential(&obs, coeffs, cfg.model.hurst, level, SequentialKind::Ratio),
            EstimatorKind::SeqMixed => estimate_sequential(&obs, coeffs, cfg.model.hurst, level, SequentialKind::Mixed),
            other => return Err((false, format!("{other} is not sequential"))),
        };
        match result {
            Ok((out, stop)) => Ok((out.estimate, stop.time)),
            Err(e) => Err((matches!(e, Error::NotHit { .. }), e.to_string())),
        }
    };

    // per replicate: [(estimate, τ)] indexed by e * levels + l
    type Pair = std::result::Result<(f64, f64), String>;
    let cells: Vec<Vec<Pair>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut out: Vec<Pair> = Vec::with_capacity(estimators.len() * levels);
            let mut reps: [Option<std::result::Result<Replicate, String>>; 2] = [None, None];
            for kind in &estimators {
                for l in 0..levels {
                    let mut outcome: Pair = Err(String::new());
                    for (p, plan) in plans.iter().enumerate() {
                        let rep = reps[p].get_or_insert_with(|| sim.replicate(&plan.generator, i).map_err(|e| e.to_string()));
                        let rep = match rep {
                            Ok(rep) => rep,
                            Err(e) => {
                                outcome = Err(e.clone());
                                break;
                            }
                        };
                        match run_one(plan, rep, *kind, l) {
                            Ok(v) => {
                                outcome = Ok(v);
                                break;
                            }
                            Err((missed, msg)) => {
                                outcome = Err(msg);
                                if !missed {
                                    break;
                                }
                            }
                        }
                    }
                    out.push(outcome);
                }
            }
            out
        })
        .collect();

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (e, kind) in estimators.iter().enumerate() {
        for (l, level) in cfg.levels.iter().enumerate() {
            let idx = e * levels + l;
            let c = collect(cells.iter().map(|row| row[idx].clone().map(|v| v.0)));
            let taus: Vec<f64> = cells.iter().filter_map(|row| row[idx].as_ref().ok().map(|v| v.1)).collect();
            let mut row = estimate_row(Some(*kind), cfg.model.theta, &c);
            row.level = Some(*level);
            row.stopping_time = Some(Summary::of(&taus));
            if *kind == EstimatorKind::SeqMle {
                row.reference_mse = Some(1.0 / level);
                row.scaled_mse = row.mse.map(|m| m * level);
                let label = row_label(&row);
                let ts = row.t_statistic.unwrap_or(f64::NAN);
                checks.push(Check::new(format!("unbiased:{label}"), ts.abs() < 3.0, format!("t = {ts:.3}")));
                let scaled = row.scaled_mse.unwrap_or(f64::NAN);
                checks.push(Check::new(
                    format!("mse_times_level:{label}"),
                    (SEQUENTIAL_BAND.0..=SEQUENTIAL_BAND.1).contains(&scaled),
                    format!("MSE*h = {scaled:.4} (stderr {:.4})", row.mse_stderr.unwrap_or(f64::NAN) * level),
                ));
                let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                checks.push(Check::new(
                    format!("deterministic_stopping:{label}"),
                    taus.len() < 2 || hi == lo,
                    format!("tau in [{lo}, {hi}]"),
                ));
                if let Some(root) = constant_chi_root(cfg, *level) {
                    let tau = taus.first().copied().unwrap_or(f64::NAN);
                    checks.push(Check::new(
                        format!("stopping_root:{label}"),
                        (tau - root).abs() <= cfg.dt,
                        format!("tau = {tau:.6}, root of the accumulation = {root:.6}"),
                    ));
                }
            }
            rows.push(row);
        }
        if cfg.paired && levels > 1 {
            let nested = cells.iter().all(|row| {
                let taus: Vec<Option<f64>> = (0..levels).map(|l| row[e * levels + l].as_ref().ok().map(|v| v.1)).collect();
                taus.windows(2).all(|w| match (w[0], w[1]) {
                    (Some(a), Some(b)) => a <= b,
                    _ => true,
                })
            });
            checks.push(Check::new(format!("stopping_nested:{kind}"), nested, "tau(h) nondecreasing in h per replicate"));
        }
    }
    Ok(ExperimentReport::new(cfg, rows, Vec::new(), checks))
}

/// `τ(h) = (h / (φ C_H)²)^{1/(2−2H)}` for constant `φ`.
fn constant_chi_root(cfg: &ExperimentConfig, level: f64) -> Option<f64> {
    let phi = match &cfg.model.kind {
        ModelKind::Linear {
            a: TimeFunction::Constant { value: a },
            b: TimeFunction::Constant { value: b },
        } => a / b,
        _ => return None,
    };
    if cfg.chi_method != ChiMethod::Closed {
        return None;
    }
    let h = cfg.model.hurst.value();
    let chi = phi * MolchanConstants::new(cfg.model.hurst).big_c_h;
    Some((level / (chi * chi)).powf(1.0 / (2.0 - 2.0 * h)))
}

/// `E exp{−a ξ²}` for `ξ = m + σ N(0, 1)`: `(2aσ² + 1)^{−1/2} exp{−a m²/(2aσ² + 1)}`.
pub fn gaussian_square_laplace(m: f64, sigma2: f64, a: f64) -> Result<f64> {
    if !(a >= 0.0) || !(sigma2 >= 0.0) || !m.is_finite() {
        return Err(Error::Domain(format!("need a >= 0 and sigma2 >= 0, got a = {a}, sigma2 = {sigma2}")));
    }
    let d = 2.0 * a * sigma2 + 1.0;
    Ok(d.powf(-0.5) * (-a * m * m / d).exp())
}

/// Monte Carlo counterpart of [`gaussian_square_laplace`] with `draws` samples.
pub fn gaussian_laplace_check(triple: GaussianTriple, draws: usize, seed: SeedPolicy, index: u64) -> Result<GaussianCheck> {
    let closed_form = gaussian_square_laplace(triple.m, triple.sigma2, triple.a)?;
    if draws < 2 {
        return Err(Error::Domain("need at least two draws".into()));
    }
    let mut rng = seed.rng(index, Stream::Auxiliary);
    let sigma = triple.sigma2.sqrt();
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let xi = triple.m + sigma * z;
            (-triple.a * xi * xi).exp()
        })
        .collect();
    let monte_carlo = stats::mean(&values);
    let stderr = stats::stderr(&values);
    let z = if stderr > 0.0 { (monte_carlo - closed_form) / stderr } else { 0.0 };
    Ok(GaussianCheck {
        triple,
        closed_form,
        monte_carlo,
        stderr,
        z,
        within: (monte_carlo - closed_form).abs() <= 3.0 * stderr,
    })
}

/// `I_T = ∫_0^T (J′_t)² t^{2H−1} dt` along one path, at every node.
/// `J′` is the finite-difference derivative of `J = ∫ l_H φ ds` for the
/// random `φ` of the path; the first cell is left out.
pub fn information_process(kernel: &MolchanKernel, phi: &[f64]) -> Result<Vec<f64>> {
    let grid = *kernel.grid();
    let hurst = kernel.hurst();
    let j = kernel.transform(&crate::grid::GridFunction::new(grid, phi.to_vec())?)?;
    let jp = j_prime(&j, hurst, &JPrimeMethod::Numeric)?;
    let bracket = bracket_increments(&grid, hurst);
    let scale = 2.0 - 2.0 * hurst.value();
    let mut out = vec![0.0; grid.len()];
    for k in 0..grid.steps() {
        let cell = jp.get(k).map(|d| d * d * bracket[k] / scale).unwrap_or(0.0);
        out[k + 1] = out[k] + cell;
    }
    Ok(out)
}

/// `Θ_T(λ) = E exp{−λ I_T}` per horizon and `λ`; with paired noise `I_T` is
/// nondecreasing in `T` on every path. Also runs the Gaussian Laplace checks.
pub fn run_ou_laplace(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sim = Simulator::new(cfg)?;
    let steps: Vec<usize> = cfg.horizons.iter().map(|t| steps_for(*t, cfg.dt)).collect::<Result<_>>()?;
    let longest = TimeGrid::new(*cfg.horizons.last().expect("validated"), *steps.last().expect("validated"))?;
    let kernel = MolchanKernel::new(longest, cfg.model.hurst);
    let generator = sim.generator(longest)?;
    let r = cfg.replicates as u64;

    let info = |rep: &Replicate| -> Result<Vec<f64>> {
        let phi = sim.instance.coeffs.phi_path(&rep.x)?;
        information_process(&kernel, &phi)
    };
    let per_path: Vec<std::result::Result<Vec<f64>, String>> = (0..r)
        .into_par_iter()
        .map(|i| {
            if cfg.paired {
                let rep = sim.replicate(&generator, i).map_err(|e| e.to_string())?;
                let all = info(&rep).map_err(|e| e.to_string())?;
                Ok(steps.iter().map(|k| all[*k]).collect())
            } else {
                steps
                    .iter()
                    .enumerate()
                    .map(|(h, k)| {
                        let grid = TimeGrid::new(cfg.horizons[h], *k)?;
                        let gen = sim.generator(grid)?;
                        let rep = sim.replicate(&gen, i + h as u64 * r)?;
                        let kernel = MolchanKernel::new(grid, cfg.model.hurst);
                        let phi = sim.instance.coeffs.phi_path(&rep.x)?;
                        Ok(*information_process(&kernel, &phi)?.last().expect("nonempty"))
                    })
                    .collect::<Result<Vec<f64>>>()
                    .map_err(|e| e.to_string())
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut by_lambda: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (h, t) in cfg.horizons.iter().enumerate() {
        for (l, lambda) in cfg.lambdas.iter().enumerate() {
            let c = collect(per_path.iter().map(|p| p.as_ref().map(|v| (-lambda * v[h]).exp()).map_err(|e| e.clone())));
            let s = Summary::of(&c.values);
            by_lambda.entry(l).or_default().push(s.mean);
            rows.push(ReportRow {
                estimator: None,
                horizon: Some(*t),
                level: None,
                lambda: Some(*lambda),
                replicates: c.values.len() + c.failures,
                failures: c.failures,
                first_failure: c.first_failure,
                mean: s.mean,
                stderr: s.stderr,
                quantiles: s.quantiles,
                bias: None,
                mse: None,
                mse_stderr: None,
                median_abs_error: None,
                reference_mse: None,
                scaled_mse: None,
                t_statistic: None,
                stopping_time: None,
            });
        }
    }
    for (l, lambda) in cfg.lambdas.iter().enumerate() {
        let theta = &by_lambda[&l];
        if *lambda == 0.0 {
            checks.push(Check::new("laplace_at_zero", theta.iter().all(|v| *v == 1.0), format!("{theta:?}")));
        } else if theta.len() > 1 {
            checks.push(Check::new(
                format!("laplace_decreasing:lambda={lambda}"),
                theta.windows(2).all(|w| w[1] < w[0]),
                format!("{theta:?}"),
            ));
        }
    }
    if cfg.paired {
        let monotone = per_path
            .iter()
            .filter_map(|p| p.as_ref().ok())
            .all(|v| v.windows(2).all(|w| w[1] >= w[0]));
        checks.push(Check::new("information_monotone", monotone, "I_T nondecreasing in T per path"));
    }
    let seed = SeedPolicy::new(cfg.seed);
    let gaussian: Vec<GaussianCheck> = cfg
        .gaussian
        .iter()
        .enumerate()
        .map(|(i, g)| gaussian_laplace_check(*g, cfg.gaussian_draws, seed, i as u64))
        .collect::<Result<_>>()?;
    for g in &gaussian {
        checks.push(Check::new(
            format!("gaussian_laplace:m={},sigma2={},a={}", g.triple.m, g.triple.sigma2, g.triple.a),
            g.within,
            format!("closed {:.6}, Monte Carlo {:.6}, z = {:.3}", g.closed_form, g.monte_carlo, g.z),
        ));
    }
    Ok(ExperimentReport::new(cfg, rows, gaussian, checks))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.kind {
        ExperimentKind::Consistency => run_consistency(cfg),
        ExperimentKind::Mse => run_mse(cfg),
        ExperimentKind::Sequential => run_sequential(cfg),
        ExperimentKind::OuLaplace => run_ou_laplace(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"
        name = "linear-small"
        kind = "mse"
        estimators = ["MLE", "RATIO"]
        horizons = [2.0, 4.0]
        replicates = 200
        dt = 0.05
        seed = 7

        [model]
        kind = "linear"
        theta = 1.0
        hurst = 0.7
        a = { kind = "constant", value = 1.0 }
        b = { kind = "constant", value = 1.0 }
    "#;

    #[test]
    fn config_parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(LINEAR).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Mse);
        assert!(cfg.paired);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again.horizons, cfg.horizons);
        assert!(ExperimentConfig::from_toml_str(&LINEAR.replace("seed = 7", "seed = 7\nbogus = 1")).is_err());
        assert!(ExperimentConfig::from_toml_str(&LINEAR.replace("dt = 0.05", "dt = 0.3")).is_err());
        assert!(ExperimentConfig::from_toml_str(&LINEAR.replace("\"RATIO\"", "\"SEQ_MLE\"")).is_err());
    }

    #[test]
    fn small_mse_run_is_reproducible_and_consistent() {
        let cfg = ExperimentConfig::from_toml_str(LINEAR).unwrap();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for r in &a.rows {
            assert_eq!(r.replicates, 200);
            assert_eq!(r.failures, 0);
            assert!(r.mse.unwrap() >= r.bias.unwrap().powi(2));
            assert!(r.quantiles.windows(2).all(|w| w[0] <= w[1]));
            assert!(r.scaled_mse.unwrap() > 0.6 && r.scaled_mse.unwrap() < 1.4);
        }
        assert!(a.check("zero_noise:MLE").unwrap().passed);
        assert!(a.check("zero_noise:RATIO").unwrap().passed);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn sequential_run_small() {
        let text = r#"
            kind = "sequential"
            levels = [1.0, 4.0]
            max_horizon = 1.0
            replicates = 100
            dt = 0.01
            seed = 3
            [model]
            kind = "linear"
            theta = 0.5
            hurst = 0.7
            a = { kind = "constant", value = 4.0 }
            b = { kind = "constant", value = 1.0 }
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let report = run(&cfg).unwrap();
        for r in &report.rows {
            assert_eq!(r.failures, 0, "{:?}", r.first_failure);
        }
        assert!(report.check("stopping_nested:SEQ_MLE").unwrap().passed);
        assert!(report.check("deterministic_stopping:SEQ_MLE@h=4").unwrap().passed, "{:?}", report.checks);
        assert!(report.check("stopping_root:SEQ_MLE@h=4").unwrap().passed, "{:?}", report.checks);
    }

    #[test]
    fn missed_level_is_retried_on_a_longer_horizon() {
        let text = r#"
            kind = "sequential"
            levels = [4.0]
            max_horizon = 0.05
            replicates = 4
            dt = 0.01
            seed = 3
            [model]
            kind = "linear"
            theta = 0.5
            hurst = 0.7
            a = { kind = "constant", value = 4.0 }
            b = { kind = "constant", value = 1.0 }
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let root = constant_chi_root(&cfg, 4.0).unwrap();
        assert!(root > 0.05 && root < 0.2, "{root}");
        let report = run(&cfg).unwrap();
        assert_eq!(report.rows[0].failures, 0);
        let missed = ExperimentConfig {
            levels: vec![400.0],
            ..cfg
        };
        let report = run(&missed).unwrap();
        assert_eq!(report.rows[0].failures, 4);
        assert!(!report.passed);
    }

    #[test]
    fn gaussian_laplace_closed_form() {
        assert_eq!(gaussian_square_laplace(3.0, 2.0, 0.0).unwrap(), 1.0);
        assert!((gaussian_square_laplace(0.0, 1.0, 0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(gaussian_square_laplace(0.0, 1.0, -0.1).is_err());
        let check = gaussian_laplace_check(GaussianTriple { m: 1.0, sigma2: 4.0, a: 0.3 }, 100_000, SeedPolicy::new(1), 0).unwrap();
        assert!(check.within, "{check:?}");
    }
}
