//! Mixed SDE `dX = θ a(t,X) dt + b(t,X) dB^H + c(t,X) dW`: Euler scheme and
//! closed-form solutions of the linear and Ornstein–Uhlenbeck families.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::HurstIndex;
use crate::grid::{PathMeta, SamplePath, TimeGrid};
use crate::molchan::ScalarFn;
use crate::special::GAUSS_LEGENDRE_8;

/// Deterministic coefficient `t ↦ f(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFunction {
    Constant { value: f64 },
    /// `scale · t^exponent`
    Power { scale: f64, exponent: f64 },
    /// `intercept + slope · t`
    Affine { intercept: f64, slope: f64 },
    /// Piecewise linear through `(times[i], values[i])`, flat outside.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl TimeFunction {
    pub fn constant(value: f64) -> Self {
        TimeFunction::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be finite, got {v}")))
            }
        };
        match self {
            TimeFunction::Constant { value } => finite(*value, "value"),
            TimeFunction::Power { scale, exponent } => {
                finite(*scale, "scale")?;
                finite(*exponent, "exponent")
            }
            TimeFunction::Affine { intercept, slope } => {
                finite(*intercept, "intercept")?;
                finite(*slope, "slope")
            }
            TimeFunction::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::Config(format!(
                        "table needs matching nonempty `times` and `values` ({} vs {})",
                        times.len(),
                        values.len()
                    )));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("table `times` must be strictly increasing".into()));
                }
                times.iter().chain(values).try_for_each(|v| finite(*v, "table entry"))
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Power { scale, exponent } => {
                if *exponent == 0.0 {
                    *scale
                } else {
                    scale * t.powf(*exponent)
                }
            }
            TimeFunction::Affine { intercept, slope } => intercept + slope * t,
            TimeFunction::Table { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return values[0];
                }
                if t >= times[last] {
                    return values[last];
                }
                let i = times.partition_point(|&s| s <= t) - 1;
                let lam = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] + lam * (values[i + 1] - values[i])
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant { .. } => 0.0,
            TimeFunction::Power { scale, exponent } => {
                if *exponent == 0.0 {
                    0.0
                } else {
                    scale * exponent * t.powf(exponent - 1.0)
                }
            }
            TimeFunction::Affine { slope, .. } => *slope,
            TimeFunction::Table { times, values } => {
                let last = times.len() - 1;
                if last == 0 || t < times[0] || t >= times[last] {
                    return 0.0;
                }
                let i = times.partition_point(|&s| s <= t) - 1;
                (values[i + 1] - values[i]) / (times[i + 1] - times[i])
            }
        }
    }

    /// `∫_{t0}^{t1} f(s) ds`, exact.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        match self {
            TimeFunction::Constant { value } => value * (t1 - t0),
            TimeFunction::Power { scale, exponent } => {
                if (*exponent + 1.0).abs() < 1e-15 {
                    scale * (t1 / t0).ln()
                } else {
                    let p = exponent + 1.0;
                    scale * (t1.powf(p) - t0.powf(p)) / p
                }
            }
            TimeFunction::Affine { intercept, slope } => {
                intercept * (t1 - t0) + 0.5 * slope * (t1 * t1 - t0 * t0)
            }
            TimeFunction::Table { .. } => self.table_antiderivative(t1) - self.table_antiderivative(t0),
        }
    }

    fn table_antiderivative(&self, t: f64) -> f64 {
        let TimeFunction::Table { times, values } = self else {
            unreachable!()
        };
        let mut acc = 0.0;
        if t <= times[0] {
            return values[0] * (t - times[0]);
        }
        for i in 0..times.len() - 1 {
            let (s0, s1) = (times[i], times[i + 1]);
            if t <= s1 {
                let v = self.eval(t);
                return acc + 0.5 * (values[i] + v) * (t - s0);
            }
            acc += 0.5 * (values[i] + values[i + 1]) * (s1 - s0);
        }
        acc + values[times.len() - 1] * (t - times[times.len() - 1])
    }

    /// `f` vanishes identically.
    pub fn is_zero(&self) -> bool {
        match self {
            TimeFunction::Constant { value } => *value == 0.0,
            TimeFunction::Power { scale, .. } => *scale == 0.0,
            TimeFunction::Affine { intercept, slope } => *intercept == 0.0 && *slope == 0.0,
            TimeFunction::Table { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }
}

pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Drift `a(t,x)`, fBm diffusion `b(t,x)`, Brownian diffusion `c(t,x)`.
#[derive(Clone)]
pub struct CoefficientSet {
    a: StateFn,
    b: StateFn,
    c: StateFn,
    c_zero: bool,
    linear_multiplicative: bool,
    phi: Option<(ScalarFn, ScalarFn)>,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("is_c_zero", &self.c_zero)
            .field("is_linear_multiplicative", &self.linear_multiplicative)
            .field("is_nonrandom_phi", &self.phi.is_some())
            .finish()
    }
}

const DEGENERACY_TOL: f64 = 1e-12;

impl CoefficientSet {
    pub fn new(
        a: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            a: Arc::new(a),
            b: Arc::new(b),
            c: Arc::new(c),
            c_zero: false,
            linear_multiplicative: false,
            phi: None,
        }
    }

    /// Pure fBm noise: `c ≡ 0`.
    pub fn without_brownian(
        a: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let mut set = Self::new(a, b, |_, _| 0.0);
        set.c_zero = true;
        set
    }

    /// Declares `φ(t) = a(t,x)/b(t,x)` free of `x`, with derivative `φ′`.
    pub fn with_nonrandom_phi(
        mut self,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.phi = Some((Arc::new(phi), Arc::new(dphi)));
        self
    }

    pub fn with_linear_multiplicative(mut self, flag: bool) -> Self {
        self.linear_multiplicative = flag;
        self
    }

    #[inline]
    pub fn a(&self, t: f64, x: f64) -> f64 {
        (self.a)(t, x)
    }

    #[inline]
    pub fn b(&self, t: f64, x: f64) -> f64 {
        (self.b)(t, x)
    }

    #[inline]
    pub fn c(&self, t: f64, x: f64) -> f64 {
        if self.c_zero {
            0.0
        } else {
            (self.c)(t, x)
        }
    }

    pub fn is_c_zero(&self) -> bool {
        self.c_zero
    }

    pub fn is_linear_multiplicative(&self) -> bool {
        self.linear_multiplicative
    }

    pub fn is_nonrandom_phi(&self) -> bool {
        self.phi.is_some()
    }

    /// `(φ, φ′)` when `φ` is nonrandom.
    pub fn nonrandom_phi(&self) -> Option<(ScalarFn, ScalarFn)> {
        self.phi.clone()
    }

    /// `φ(t_k, X_k) = a/b` at every node.
    pub fn phi_path(&self, x: &SamplePath) -> Result<Vec<f64>> {
        self.ratio_path(x, &self.a, &self.b, "B1 (b(t, X_t) != 0)")
    }

    /// `φ₁ = a/c` at every node.
    pub fn phi1_path(&self, x: &SamplePath) -> Result<Vec<f64>> {
        self.require_brownian()?;
        self.ratio_path(x, &self.a, &self.c, "C1 (c(t, X_t) != 0)")
    }

    /// `φ₂ = b/c` at every node.
    pub fn phi2_path(&self, x: &SamplePath) -> Result<Vec<f64>> {
        self.require_brownian()?;
        self.ratio_path(x, &self.b, &self.c, "C1 (c(t, X_t) != 0)")
    }

    /// Increments of `Y = ∫ b^{−1}(s,X_s) dX_s`, left-point.
    pub fn fbm_normalized_increments(&self, x: &SamplePath) -> Result<Vec<f64>> {
        self.normalized_increments(x, &self.b, "B1 (b(t, X_t) != 0)")
    }

    /// Increments of `Y = ∫ c^{−1}(s,X_s) dX_s`, left-point.
    pub fn brownian_normalized_increments(&self, x: &SamplePath) -> Result<Vec<f64>> {
        self.require_brownian()?;
        self.normalized_increments(x, &self.c, "C1 (c(t, X_t) != 0)")
    }

    fn require_brownian(&self) -> Result<()> {
        if self.c_zero {
            Err(Error::NotApplicable(
                "the model has no Brownian component (c = 0), condition C1 fails".into(),
            ))
        } else {
            Ok(())
        }
    }

    fn ratio_path(&self, x: &SamplePath, num: &StateFn, den: &StateFn, condition: &'static str) -> Result<Vec<f64>> {
        let grid = x.grid();
        x.values()
            .iter()
            .enumerate()
            .map(|(k, &xk)| {
                let t = grid.time(k);
                let d = den(t, xk);
                check_nondegenerate(d, t, condition)?;
                Ok(num(t, xk) / d)
            })
            .collect()
    }

    fn normalized_increments(&self, x: &SamplePath, den: &StateFn, condition: &'static str) -> Result<Vec<f64>> {
        let grid = x.grid();
        let v = x.values();
        (0..grid.steps())
            .map(|k| {
                let t = grid.time(k);
                let d = den(t, v[k]);
                check_nondegenerate(d, t, condition)?;
                Ok((v[k + 1] - v[k]) / d)
            })
            .collect()
    }
}

fn check_nondegenerate(value: f64, time: f64, condition: &'static str) -> Result<()> {
    if value.abs() < DEGENERACY_TOL || !value.is_finite() {
        Err(Error::Degenerate {
            condition,
            time,
            value: value.abs(),
        })
    } else {
        Ok(())
    }
}

/// Model families with deterministic time coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `dX = θ a(t) X dt + b(t) X dB^H`
    Linear { a: TimeFunction, b: TimeFunction },
    /// `dX = θ a(t) X dt + b(t) X dB^H + c(t) X dW`
    MixedLinear {
        a: TimeFunction,
        b: TimeFunction,
        c: TimeFunction,
    },
    /// `dX = θ (a(t) X + b(t)) dt + γ(t) dB^H`
    Ou {
        a: TimeFunction,
        b: TimeFunction,
        gamma: TimeFunction,
    },
    /// `dX = θ a(t) dt + b(t) dB^H + c(t) dW`
    Additive {
        a: TimeFunction,
        b: TimeFunction,
        #[serde(default = "zero_function")]
        c: TimeFunction,
    },
}

fn zero_function() -> TimeFunction {
    TimeFunction::constant(0.0)
}

fn default_x0() -> f64 {
    1.0
}

impl ModelKind {
    /// Family name as used in configs and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Linear { .. } => "linear",
            ModelKind::MixedLinear { .. } => "mixed_linear",
            ModelKind::Ou { .. } => "ou",
            ModelKind::Additive { .. } => "additive",
        }
    }

    /// Family with unit coefficients (`ou`: `dX = θX dt + dB^H`).
    pub fn preset(name: &str) -> Result<Self> {
        let one = || TimeFunction::constant(1.0);
        Ok(match name {
            "linear" => ModelKind::Linear { a: one(), b: one() },
            "mixed_linear" | "mixed-linear" => ModelKind::MixedLinear {
                a: one(),
                b: one(),
                c: one(),
            },
            "ou" => ModelKind::Ou {
                a: one(),
                b: zero_function(),
                gamma: one(),
            },
            "additive" => ModelKind::Additive {
                a: one(),
                b: one(),
                c: zero_function(),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown model `{other}` (expected linear, mixed_linear, ou or additive)"
                )))
            }
        })
    }

    fn functions(&self) -> Vec<&TimeFunction> {
        match self {
            ModelKind::Linear { a, b } => vec![a, b],
            ModelKind::MixedLinear { a, b, c } | ModelKind::Additive { a, b, c } => vec![a, b, c],
            ModelKind::Ou { a, b, gamma } => vec![a, b, gamma],
        }
    }

    pub fn coefficients(&self) -> CoefficientSet {
        match self.clone() {
            ModelKind::Linear { a, b } => {
                let (a1, b1) = (a.clone(), b.clone());
                CoefficientSet::without_brownian(move |t, x| a1.eval(t) * x, move |t, x| b1.eval(t) * x)
                    .with_linear_multiplicative(true)
                    .with_quotient_phi(a, b)
            }
            ModelKind::MixedLinear { a, b, c } => {
                let (a1, b1) = (a.clone(), b.clone());
                let mut set = CoefficientSet::new(
                    move |t, x| a1.eval(t) * x,
                    move |t, x| b1.eval(t) * x,
                    move |t, x| c.eval(t) * x,
                )
                .with_linear_multiplicative(true)
                .with_quotient_phi(a, b);
                set.c_zero = self.functions()[2].is_zero();
                set
            }
            ModelKind::Ou { a, b, gamma } => CoefficientSet::without_brownian(
                move |t, x| a.eval(t) * x + b.eval(t),
                move |t, _| gamma.eval(t),
            ),
            ModelKind::Additive { a, b, c } => {
                let c_zero = c.is_zero();
                let (a1, b1) = (a.clone(), b.clone());
                let mut set = CoefficientSet::new(move |t, _| a1.eval(t), move |t, _| b1.eval(t), move |t, _| c.eval(t))
                    .with_quotient_phi(a, b);
                set.c_zero = c_zero;
                set
            }
        }
    }
}

impl CoefficientSet {
    fn with_quotient_phi(self, a: TimeFunction, b: TimeFunction) -> Self {
        let (a1, b1) = (a.clone(), b.clone());
        self.with_nonrandom_phi(
            move |t| a1.eval(t) / b1.eval(t),
            move |t| {
                let bv = b.eval(t);
                (a.derivative(t) * bv - a.eval(t) * b.derivative(t)) / (bv * bv)
            },
        )
    }
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub theta: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    pub hurst: HurstIndex,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for f in self.kind.functions() {
            f.validate()?;
        }
        if !self.theta.is_finite() || !self.x0.is_finite() {
            return Err(Error::Config("theta and x0 must be finite".into()));
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<ModelInstance> {
        self.validate()?;
        Ok(ModelInstance {
            coeffs: self.kind.coefficients(),
            theta: self.theta,
            x0: self.x0,
            hurst: self.hurst,
        })
    }

    /// Closed-form solution driven by the given noise, when the family has one.
    pub fn exact_solution(&self, grid: TimeGrid, w: &SamplePath, bh: &SamplePath) -> Result<SamplePath> {
        match &self.kind {
            ModelKind::Linear { a, b } => linear_solution(a, b, self.theta, self.x0, grid, bh),
            ModelKind::MixedLinear { a, b, c } => mixed_linear_solution(a, b, c, self.theta, self.x0, grid, bh, w),
            ModelKind::Ou { a, b, gamma } => ou_solution(a, b, gamma, self.theta, self.x0, grid, bh),
            ModelKind::Additive { a, b, c } => {
                grid.ensure_same(bh.grid(), "fBm driver")?;
                grid.ensure_same(w.grid(), "Brownian driver")?;
                let (dbh, dw) = (bh.increments(), w.increments());
                let mut x = self.x0;
                let mut values = vec![x];
                for k in 0..grid.steps() {
                    let (t0, t1) = (grid.time(k), grid.time(k + 1));
                    x += self.theta * a.integral(t0, t1) + b.eval(t0) * dbh[k] + c.eval(t0) * dw[k];
                    values.push(x);
                }
                SamplePath::new(grid, values, PathMeta::tagged("additive-exact"))
            }
        }
    }
}

/// A fully specified model: coefficients, true `θ`, `x0` and `H`.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub coeffs: CoefficientSet,
    pub theta: f64,
    pub x0: f64,
    pub hurst: HurstIndex,
}

impl ModelInstance {
    /// Numerical spot checks of linear growth, Lipschitz continuity of `b` in
    /// `x`, and `b ≠ 0`, on `[0, T] × [−R, R]`. Returns warnings, never fails.
    pub fn check_assumptions(&self, horizon: f64, radius: f64) -> Vec<String> {
        let mut warnings = Vec::new();
        let ts: Vec<f64> = (0..=20).map(|i| horizon * i as f64 / 20.0).collect();
        let xs: Vec<f64> = (0..=20).map(|i| -radius + 2.0 * radius * i as f64 / 20.0).collect();
        let mut growth: f64 = 0.0;
        let mut lipschitz: f64 = 0.0;
        let mut zero_b = None;
        for &t in &ts {
            for &x in &xs {
                let vals = [self.coeffs.a(t, x), self.coeffs.b(t, x), self.coeffs.c(t, x)];
                if vals.iter().any(|v| !v.is_finite()) {
                    warnings.push(format!("coefficients not finite at (t, x) = ({t}, {x})"));
                    return warnings;
                }
                growth = growth.max(vals.iter().map(|v| v.abs()).fold(0.0, f64::max) / (1.0 + x.abs()));
                let eps = 1e-6 * (1.0 + x.abs());
                let db = (self.coeffs.b(t, x + eps) - self.coeffs.b(t, x - eps)) / (2.0 * eps);
                lipschitz = lipschitz.max(db.abs());
                if vals[1].abs() < DEGENERACY_TOL && zero_b.is_none() {
                    zero_b = Some((t, x));
                }
            }
        }
        if growth > 1e6 {
            warnings.push(format!("linear growth constant looks unbounded ({growth:e})"));
        }
        if lipschitz > 1e6 {
            warnings.push(format!("b is not Lipschitz in x on the box ({lipschitz:e})"));
        }
        if let Some((t, x)) = zero_b {
            warnings.push(format!("b vanishes at (t, x) = ({t}, {x}); estimators need b(t, X_t) != 0 along the path"));
        }
        warnings
    }
}

/// Euler scheme, left-point in all three integrals.
pub fn solve_euler(model: &ModelInstance, grid: TimeGrid, w: &SamplePath, bh: &SamplePath) -> Result<SamplePath> {
    grid.ensure_same(bh.grid(), "fBm driver")?;
    grid.ensure_same(w.grid(), "Brownian driver")?;
    let (dbh, dw) = (bh.increments(), w.increments());
    let dt = grid.dt();
    let c = &model.coeffs;
    let mut x = model.x0;
    let mut values = Vec::with_capacity(grid.len());
    values.push(x);
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let mut next = x + model.theta * c.a(t, x) * dt + c.b(t, x) * dbh[k];
        if !c.is_c_zero() {
            next += c.c(t, x) * dw[k];
        }
        if !next.is_finite() || next.abs() > 1e300 {
            return Err(Error::Diverged {
                step: k + 1,
                time: grid.time(k + 1),
                value: next,
            });
        }
        x = next;
        values.push(x);
    }
    SamplePath::new(grid, values, PathMeta { generator: "euler".into(), ..bh.meta.clone() })
}

/// `∫_{t0}^{t1} g` by the 8-point Gauss–Legendre rule.
fn cell_quad(g: impl Fn(f64) -> f64, t0: f64, t1: f64) -> f64 {
    let h = t1 - t0;
    GAUSS_LEGENDRE_8.iter().map(|&(x, w)| w * g(t0 + x * h)).sum::<f64>() * h
}

/// `X_t = x0 exp{θ∫a ds + ∫b dB^H}`, Young sum for the fBm integral.
pub fn linear_solution(
    a: &TimeFunction,
    b: &TimeFunction,
    theta: f64,
    x0: f64,
    grid: TimeGrid,
    bh: &SamplePath,
) -> Result<SamplePath> {
    let w = SamplePath::zeros(grid);
    mixed_linear_solution(a, b, &zero_function(), theta, x0, grid, bh, &w)
}

/// `X_t = x0 exp{θ∫a ds + ∫b dB^H + ∫c dW − ½∫c² ds}`, left-point sums for
/// both stochastic integrals.
#[allow(clippy::too_many_arguments)]
pub fn mixed_linear_solution(
    a: &TimeFunction,
    b: &TimeFunction,
    c: &TimeFunction,
    theta: f64,
    x0: f64,
    grid: TimeGrid,
    bh: &SamplePath,
    w: &SamplePath,
) -> Result<SamplePath> {
    grid.ensure_same(bh.grid(), "fBm driver")?;
    grid.ensure_same(w.grid(), "Brownian driver")?;
    let (dbh, dw) = (bh.increments(), w.increments());
    let c_zero = c.is_zero();
    let mut exponent = 0.0;
    let mut values = Vec::with_capacity(grid.len());
    values.push(x0);
    for k in 0..grid.steps() {
        let (t0, t1) = (grid.time(k), grid.time(k + 1));
        exponent += theta * a.integral(t0, t1) + b.eval(t0) * dbh[k];
        if !c_zero {
            exponent += c.eval(t0) * dw[k] - 0.5 * cell_quad(|s| c.eval(s).powi(2), t0, t1);
        }
        values.push(x0 * exponent.exp());
    }
    let tag = if c_zero { "linear-exact" } else { "mixed-linear-exact" };
    SamplePath::new(grid, values, PathMeta { generator: tag.into(), ..bh.meta.clone() })
}

/// `X_t = e^{θA(t)}(x0 + θ∫b e^{−θA} ds + ∫γ e^{−θA} dB^H)`, `A(t) = ∫_0^t a`.
/// The fBm integral uses the exact cell average of the integrand times the
/// increment.
pub fn ou_solution(
    a: &TimeFunction,
    b: &TimeFunction,
    gamma: &TimeFunction,
    theta: f64,
    x0: f64,
    grid: TimeGrid,
    bh: &SamplePath,
) -> Result<SamplePath> {
    grid.ensure_same(bh.grid(), "fBm driver")?;
    for (k, t) in grid.times().enumerate() {
        let g = gamma.eval(t);
        if !(g > 0.0) {
            return Err(Error::Domain(format!("gamma(t) must be positive, got {g} at node {k}")));
        }
    }
    let dbh = bh.increments();
    let dt = grid.dt();
    let big_a = |s: f64| a.integral(0.0, s);
    let mut acc = x0;
    let mut values = Vec::with_capacity(grid.len());
    values.push(x0);
    for k in 0..grid.steps() {
        let (t0, t1) = (grid.time(k), grid.time(k + 1));
        let drift = cell_quad(|s| b.eval(s) * (-theta * big_a(s)).exp(), t0, t1);
        let avg = cell_quad(|s| gamma.eval(s) * (-theta * big_a(s)).exp(), t0, t1) / dt;
        acc += theta * drift + avg * dbh[k];
        let x = (theta * big_a(t1)).exp() * acc;
        if !x.is_finite() {
            return Err(Error::Diverged {
                step: k + 1,
                time: t1,
                value: x,
            });
        }
        values.push(x);
    }
    SamplePath::new(grid, values, PathMeta { generator: "ou-exact".into(), ..bh.meta.clone() })
}
