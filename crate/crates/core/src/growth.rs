//! Fractional-derivative process of fBm, its moment and growth bounds, and
//! the increment quantity `I(z1, z2)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frac::FractionalOrder;
use crate::gauss::{FbmGenerator, FbmMethod, HurstIndex};
use crate::grid::{SamplePath, TimeGrid};
use crate::seed::SeedPolicy;
use crate::stats::{self, Summary};

/// Evaluation point `(t1, t2)` with `0 <= t2 < t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoTimePoint {
    pub t1: f64,
    pub t2: f64,
}

impl TwoTimePoint {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1.is_finite() && t2.is_finite()) || t2 < 0.0 || t2 >= t1 {
            return Err(Error::Domain(format!("two-time point needs 0 <= t2 < t1, got t1 = {t1}, t2 = {t2}")));
        }
        Ok(Self { t1, t2 })
    }

    pub fn gap(&self) -> f64 {
        self.t1 - self.t2
    }
}

/// `X(t) = (B_{t1} − B_{t2})/(t1 − t2)^{1−α} + ∫_{t2}^{t1} (B_u − B_{t2})(u − t2)^{α−2} du`
/// for the piecewise-linear interpolant of `bh`. Each linear piece is
/// integrated against the singular kernel exactly.
pub fn frac_deriv_process(bh: &SamplePath, pt: TwoTimePoint, alpha: FractionalOrder) -> Result<f64> {
    let pt = TwoTimePoint::new(pt.t1, pt.t2)?;
    let grid = bh.grid();
    if pt.t1 > grid.horizon() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("t1 = {} exceeds the horizon {}", pt.t1, grid.horizon())));
    }
    let a = alpha.value();
    let dt = grid.dt();
    let base = bh.value_at(pt.t2);
    let top = bh.value_at(pt.t1);

    let mut knots = vec![(0.0, 0.0)];
    let first = (pt.t2 / dt).floor() as usize + 1;
    for k in first..grid.len() {
        let t = grid.time(k);
        if t >= pt.t1 - 1e-9 * dt {
            break;
        }
        if t - pt.t2 > 1e-9 * dt {
            knots.push((t - pt.t2, bh.values()[k] - base));
        }
    }
    knots.push((pt.gap(), top - base));

    let mut total = (top - base) * pt.gap().powf(a - 1.0);
    for w in knots.windows(2) {
        let ((lo, y0), (hi, y1)) = (w[0], w[1]);
        let slope = (y1 - y0) / (hi - lo);
        total += slope * (hi.powf(a) - lo.powf(a)) / a;
        if lo > 0.0 {
            let intercept = y0 - slope * lo;
            total += intercept * (lo.powf(a - 1.0) - hi.powf(a - 1.0)) / (1.0 - a);
        }
    }
    Ok(total)
}

/// Normalizer `A(t) = t^γ (ln t)^p ∨ 1`, with `A(t) = 1` for `t <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEnvelope {
    pub exponent: f64,
    pub p: f64,
}

impl GrowthEnvelope {
    fn checked(exponent: f64, p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("envelope power p must exceed 1, got {p}")));
        }
        Ok(Self { exponent, p })
    }

    /// Envelope of the fractional-derivative process: `γ = H + α − 1`.
    pub fn for_derivative(p: f64, hurst: HurstIndex, alpha: FractionalOrder) -> Result<Self> {
        let alpha = FractionalOrder::for_fbm(alpha.value(), hurst)?;
        Self::checked(hurst.value() + alpha.value() - 1.0, p)
    }

    /// Envelope of `sup |B^H|`: `γ = H`.
    pub fn for_sup(p: f64, hurst: HurstIndex) -> Result<Self> {
        Self::checked(hurst.value(), p)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 1.0 {
            1.0
        } else {
            (t.powf(self.exponent) * t.ln().powf(self.p)).max(1.0)
        }
    }
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 2 {
        return Err(Error::Domain("at least two replicates are needed".into()));
    }
    Ok(())
}

fn fbm_generator(grid: TimeGrid, hurst: HurstIndex) -> Result<FbmGenerator> {
    FbmGenerator::new(grid, hurst, FbmMethod::Auto)
}

// ---------------------------------------------------------------------------
// Second moment of X

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentConfig {
    pub hurst: HurstIndex,
    pub alpha: FractionalOrder,
    pub horizon: f64,
    pub steps: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Evaluation design; `None` selects [`MomentConfig::default_design`].
    #[serde(default)]
    pub points: Option<Vec<TwoTimePoint>>,
}

impl MomentConfig {
    /// `t2 ∈ {0, 1, 2.5, 5}` crossed with gaps `{1/32, 1/8, 1/2, 1, 2}`.
    pub fn default_design() -> Vec<TwoTimePoint> {
        let mut out = Vec::new();
        for t2 in [0.0, 1.0, 2.5, 5.0] {
            for gap in [1.0 / 32.0, 0.125, 0.5, 1.0, 2.0] {
                out.push(TwoTimePoint { t1: t2 + gap, t2 });
            }
        }
        out
    }

    pub fn design(&self) -> Vec<TwoTimePoint> {
        self.points.clone().unwrap_or_else(Self::default_design)
    }

    /// `((α + H)/(α + H − 1)) (t1 − t2)^{H+α−1}`.
    pub fn bound(&self, pt: &TwoTimePoint) -> f64 {
        let s = self.hurst.value() + self.alpha.value();
        s / (s - 1.0) * pt.gap().powf(s - 1.0)
    }
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            hurst: HurstIndex::new(0.7).expect("valid"),
            alpha: FractionalOrder::new(0.4).expect("valid"),
            horizon: 8.0,
            steps: 1024,
            replicates: 10_000,
            seed: 20_240_607,
            points: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentRow {
    pub t1: f64,
    pub t2: f64,
    pub rms: f64,
    pub rms_stderr: f64,
    pub bound: f64,
    /// `rms / bound`.
    pub ratio: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub config: MomentConfig,
    pub rows: Vec<MomentRow>,
    /// Every row satisfies `rms <= bound + 3 stderr`.
    pub passed: bool,
    /// Share of rows with `rms <= bound` outright.
    pub share_below: f64,
}

/// Monte Carlo `(E X²)^{1/2}` over the design, compared with the analytic envelope.
pub fn verify_moment_bound(cfg: &MomentConfig) -> Result<MomentReport> {
    check_replicates(cfg.replicates)?;
    let alpha = FractionalOrder::for_fbm(cfg.alpha.value(), cfg.hurst)?;
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let design = cfg.design();
    for pt in &design {
        TwoTimePoint::new(pt.t1, pt.t2)?;
        if pt.t1 > cfg.horizon {
            return Err(Error::Domain(format!("design point t1 = {} beyond horizon {}", pt.t1, cfg.horizon)));
        }
    }
    let generator = fbm_generator(grid, cfg.hurst)?;
    let seed = SeedPolicy::new(cfg.seed);
    let samples: Vec<Vec<f64>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let path = generator.sample(seed, i);
            design
                .iter()
                .map(|pt| frac_deriv_process(&path, *pt, alpha).expect("validated design"))
                .collect()
        })
        .collect();

    let rows: Vec<MomentRow> = design
        .iter()
        .enumerate()
        .map(|(p, pt)| {
            let squares: Vec<f64> = samples.iter().map(|s| s[p] * s[p]).collect();
            let rms = stats::mean(&squares).sqrt();
            let rms_stderr = stats::stderr(&squares) / (2.0 * rms);
            let bound = cfg.bound(pt);
            MomentRow {
                t1: pt.t1,
                t2: pt.t2,
                rms,
                rms_stderr,
                bound,
                ratio: rms / bound,
                within: rms <= bound + 3.0 * rms_stderr,
            }
        })
        .collect();
    let below = rows.iter().filter(|r| r.rms <= r.bound).count();
    Ok(MomentReport {
        config: cfg.clone(),
        passed: rows.iter().all(|r| r.within),
        share_below: below as f64 / rows.len() as f64,
        rows,
    })
}

// ---------------------------------------------------------------------------
// The increment quantity I(z1, z2)

fn gaus1_check(hurst: HurstIndex, alpha: FractionalOrder) -> Result<f64> {
    let alpha = FractionalOrder::for_fbm(alpha.value(), hurst)?;
    Ok(hurst.value() + alpha.value() - 1.0)
}

/// `I = z2^{2γ} + z1^{2γ} + (|z2 − z1|^{2H} − z1^{2H} − z2^{2H}) / (z1 z2)^{1−α}`,
/// `γ = H + α − 1`, evaluated as written.
pub fn lemma_gaus1_quantity(z1: f64, z2: f64, hurst: HurstIndex, alpha: FractionalOrder) -> Result<f64> {
    let g = gaus1_check(hurst, alpha)?;
    if !(z1 > 0.0 && z2 > 0.0) || !z1.is_finite() || !z2.is_finite() {
        return Err(Error::Domain(format!("z1 and z2 must be positive, got {z1}, {z2}")));
    }
    let h2 = 2.0 * hurst.value();
    let a = alpha.value();
    Ok(z2.powf(2.0 * g) + z1.powf(2.0 * g)
        + ((z2 - z1).abs().powf(h2) - z1.powf(h2) - z2.powf(h2)) / (z1 * z2).powf(1.0 - a))
}

/// `f(u) = I(1, u)/|u − 1|^{2γ}`; `I` is homogeneous and symmetric, so this is
/// the ratio `I/|z2 − z1|^{2γ}` at `u = z2/z1`. Uses cancellation-free forms
/// near `u = 1` and for large `u`.
pub fn gaus1_ratio(u: f64, hurst: HurstIndex, alpha: FractionalOrder) -> Result<f64> {
    let g = gaus1_check(hurst, alpha)?;
    if !(u > 0.0) || !u.is_finite() || u == 1.0 {
        return Err(Error::Domain(format!("ratio needs u > 0, u != 1, got {u}")));
    }
    Ok(ratio_unchecked(if u < 1.0 { 1.0 / u } else { u }, hurst.value(), alpha.value(), g))
}

fn ratio_unchecked(u: f64, h: f64, a: f64, g: f64) -> f64 {
    let eps = u - 1.0;
    let denom = eps.powf(2.0 * g);
    if u < 2.0 {
        let l = eps.ln_1p();
        let p = -((a - 1.0) * l).exp_m1();
        let q = -((2.0 * h + a - 1.0) * l).exp_m1();
        p * q / denom + eps.powf(2.0 - 2.0 * a) * ((a - 1.0) * l).exp()
    } else {
        let ua = u.powf(a - 1.0);
        let tail = ua * u.powf(2.0 * h) * (2.0 * h * (-1.0 / u).ln_1p()).exp_m1();
        (1.0 + u.powf(2.0 * g) - ua + tail) / denom
    }
}

/// Second part of the decomposition `I = I₁ + I₂` with `I₂ = (z2 − z1)^{2γ} r(u)`:
/// `r(u) = ((u − 1)^{2H} − (u^H − 1)²) / (u^{1−α} (u − 1)^{2γ})` for `u > 1`.
/// Tends to 0 at both ends.
pub fn gaus1_remainder(u: f64, hurst: HurstIndex, alpha: FractionalOrder) -> Result<f64> {
    let g = gaus1_check(hurst, alpha)?;
    if !(u > 0.0) || !u.is_finite() || u == 1.0 {
        return Err(Error::Domain(format!("remainder needs u > 0, u != 1, got {u}")));
    }
    Ok(remainder_unchecked(if u < 1.0 { 1.0 / u } else { u }, hurst.value(), alpha.value(), g))
}

fn remainder_unchecked(u: f64, h: f64, a: f64, g: f64) -> f64 {
    let eps = u - 1.0;
    let scale = u.powf(1.0 - a);
    if u < 2.0 {
        let dh = (h * eps.ln_1p()).exp_m1();
        eps.powf(2.0 * h - 2.0 * g) / scale - dh * dh / (scale * eps.powf(2.0 * g))
    } else {
        let num = u.powf(2.0 * h) * (2.0 * h * (-1.0 / u).ln_1p()).exp_m1() + 2.0 * u.powf(h) - 1.0;
        num / (scale * eps.powf(2.0 * g))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaus1Config {
    pub hurst: HurstIndex,
    pub alpha: FractionalOrder,
    #[serde(default = "Gaus1Config::default_lo")]
    pub lo: f64,
    #[serde(default = "Gaus1Config::default_hi")]
    pub hi: f64,
    /// Points per axis at each refinement level.
    #[serde(default = "Gaus1Config::default_levels")]
    pub levels: Vec<usize>,
}

impl Gaus1Config {
    fn default_lo() -> f64 {
        1e-2
    }
    fn default_hi() -> f64 {
        1e2
    }
    fn default_levels() -> Vec<usize> {
        vec![50, 100, 200, 400, 800]
    }

    pub fn new(hurst: HurstIndex, alpha: FractionalOrder) -> Self {
        Self {
            hurst,
            alpha,
            lo: Self::default_lo(),
            hi: Self::default_hi(),
            levels: Self::default_levels(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gaus1Level {
    pub points: usize,
    pub sup: f64,
    pub argmax_u: f64,
    /// Relative change of `sup` from the previous level.
    pub change: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatioSample {
    pub u: f64,
    pub ratio: f64,
    /// [`gaus1_remainder`] at `u`.
    pub remainder: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gaus1Report {
    pub config: Gaus1Config,
    pub levels: Vec<Gaus1Level>,
    pub sup_finite: bool,
    /// Last refinement changes the sup by less than 5%.
    pub refinement_stable: bool,
    /// Along `u = 1 + 10^{-k}`, `k = 1..=8`.
    pub near_one: Vec<RatioSample>,
    /// Along `u = 10^k`, `k = 1..=40`.
    pub near_infinity: Vec<RatioSample>,
    /// Ratio at the last sample; tends to 0 at `u → 1⁺` and to 1 at `u → ∞`.
    pub limit_at_one: f64,
    pub limit_at_infinity: f64,
    /// Remainder at the last samples; tends to 0 at both ends.
    pub remainder_limit_at_one: f64,
    pub remainder_limit_at_infinity: f64,
    /// All four limits reproduced within `1e-2` absolute.
    pub limits_reproduced: bool,
    /// Smallest `I` (as written) over a 100 x 100 log grid, and of the stable `f`.
    pub min_quantity: f64,
    pub min_ratio: f64,
    pub nonnegative: bool,
    pub passed: bool,
}

fn log_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp()).collect()
}

/// Grid study of `sup I/|z2 − z1|^{2γ}` with its limits at `u → 1⁺` and `u → ∞`.
pub fn verify_gaus1_bound(cfg: &Gaus1Config) -> Result<Gaus1Report> {
    let g = gaus1_check(cfg.hurst, cfg.alpha)?;
    let (h, a) = (cfg.hurst.value(), cfg.alpha.value());
    if !(cfg.lo > 0.0 && cfg.hi > cfg.lo) || cfg.levels.is_empty() || cfg.levels.iter().any(|m| *m < 2) {
        return Err(Error::Domain("grid study needs 0 < lo < hi and levels with at least 2 points".into()));
    }
    let mut levels: Vec<Gaus1Level> = Vec::new();
    for &m in &cfg.levels {
        let z = log_grid(cfg.lo, cfg.hi, m);
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        for (i, z1) in z.iter().enumerate() {
            for z2 in &z[i + 1..] {
                let u = z2 / z1;
                let f = ratio_unchecked(u, h, a, g);
                if f > best.0 || f.is_nan() {
                    best = (f, u);
                }
            }
        }
        let change = levels.last().map(|prev| (best.0 - prev.sup).abs() / prev.sup.abs());
        levels.push(Gaus1Level {
            points: m,
            sup: best.0,
            argmax_u: best.1,
            change,
        });
    }
    let sup_finite = levels.iter().all(|l| l.sup.is_finite());
    let refinement_stable = levels.last().and_then(|l| l.change).is_some_and(|c| c < 0.05);

    let sample = |u: f64| RatioSample {
        u,
        ratio: ratio_unchecked(u, h, a, g),
        remainder: remainder_unchecked(u, h, a, g),
    };
    let near_one: Vec<RatioSample> = (1..=8).map(|k| sample(1.0 + 10f64.powi(-k))).collect();
    let near_infinity: Vec<RatioSample> = (1..=40).map(|k| sample(10f64.powi(k))).collect();
    let at_one = *near_one.last().expect("nonempty");
    let at_infinity = *near_infinity.last().expect("nonempty");
    let limits_reproduced = at_one.ratio.abs() < 1e-2
        && (at_infinity.ratio - 1.0).abs() < 1e-2
        && at_one.remainder.abs() < 1e-2
        && at_infinity.remainder.abs() < 1e-2;

    let z = log_grid(cfg.lo, cfg.hi, 100);
    let mut min_quantity = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut nonnegative = true;
    for z1 in &z {
        for z2 in &z {
            let q = lemma_gaus1_quantity(*z1, *z2, cfg.hurst, cfg.alpha)?;
            min_quantity = min_quantity.min(q);
            // roundoff of the displayed form near the diagonal
            let scale = z1.powf(2.0 * g) + z2.powf(2.0 * g);
            if q < -1e-12 * scale {
                nonnegative = false;
            }
            if z1 != z2 {
                let f = ratio_unchecked((z2 / z1).max(z1 / z2), h, a, g);
                min_ratio = min_ratio.min(f);
                nonnegative &= f >= 0.0;
            }
        }
    }

    Ok(Gaus1Report {
        config: cfg.clone(),
        passed: sup_finite && refinement_stable && limits_reproduced && nonnegative,
        levels,
        sup_finite,
        refinement_stable,
        near_one,
        near_infinity,
        limit_at_one: at_one.ratio,
        limit_at_infinity: at_infinity.ratio,
        remainder_limit_at_one: at_one.remainder,
        remainder_limit_at_infinity: at_infinity.remainder,
        limits_reproduced,
        min_quantity,
        min_ratio,
        nonnegative,
    })
}

// ---------------------------------------------------------------------------
// Growth of the sup

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    pub hurst: HurstIndex,
    /// `None` studies `sup |B^H|` instead of the fractional-derivative process.
    #[serde(default)]
    pub alpha: Option<FractionalOrder>,
    pub p: f64,
    pub dt: f64,
    pub horizons: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// Size of the geometric part of the `t2` design.
    #[serde(default = "GrowthConfig::default_geometric")]
    pub geometric_points: usize,
    /// Size of the uniform part of the `t2` design.
    #[serde(default = "GrowthConfig::default_uniform")]
    pub uniform_points: usize,
    /// Near-diagonal gaps `t1 − t2` in cells, taken at every node.
    #[serde(default = "GrowthConfig::default_gaps")]
    pub near_gaps: Vec<usize>,
}

impl GrowthConfig {
    fn default_geometric() -> usize {
        40
    }
    fn default_uniform() -> usize {
        64
    }
    fn default_gaps() -> Vec<usize> {
        vec![1, 2, 4]
    }

    pub fn derivative(hurst: HurstIndex, alpha: FractionalOrder) -> Self {
        Self {
            hurst,
            alpha: Some(alpha),
            p: 2.0,
            dt: 0.25,
            horizons: vec![250.0, 500.0, 1000.0],
            replicates: 10_000,
            seed: 20_240_611,
            geometric_points: Self::default_geometric(),
            uniform_points: Self::default_uniform(),
            near_gaps: Self::default_gaps(),
        }
    }

    pub fn sup_fbm(hurst: HurstIndex) -> Self {
        Self {
            alpha: None,
            ..Self::derivative(hurst, FractionalOrder::new(0.5).expect("valid"))
        }
    }

    pub fn envelope(&self) -> Result<GrowthEnvelope> {
        match self.alpha {
            Some(alpha) => GrowthEnvelope::for_derivative(self.p, self.hurst, alpha),
            None => GrowthEnvelope::for_sup(self.p, self.hurst),
        }
    }

    fn validate(&self) -> Result<TimeGrid> {
        check_replicates(self.replicates)?;
        self.envelope()?;
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Domain("horizons must be positive and nonempty".into()));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("horizons must be strictly increasing".into()));
        }
        let longest = *self.horizons.last().expect("nonempty");
        TimeGrid::with_step(longest, self.dt)
    }
}

/// Tail levels of the log-tail shape check.
pub const TAIL_LEVELS: [f64; 5] = [0.5, 0.75, 0.9, 0.95, 0.99];

/// Allowed median drift across horizons for the stability verdict.
pub const STABILITY_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRow {
    pub horizon: f64,
    pub xi: Summary,
    /// Same sup with `A ≡ 1`.
    pub control: Summary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailPoint {
    pub level: f64,
    pub epsilon: f64,
    pub log_tail: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub config: GrowthConfig,
    pub envelope: GrowthEnvelope,
    pub rows: Vec<GrowthRow>,
    /// `max/min − 1` of the medians of `ξ̂` across horizons.
    pub median_spread: f64,
    pub stable: bool,
    /// `max/min − 1` of the control medians.
    pub control_spread: f64,
    /// Control medians strictly increase and spread beyond the stability tolerance.
    pub control_grows: bool,
    /// `ξ̂` is nondecreasing in the horizon on every path.
    pub pathwise_monotone: bool,
    /// `(ε_q, ln(1 − q))` of `ξ̂` at the longest horizon.
    pub tail: Vec<TailPoint>,
    pub tail_slopes: Vec<f64>,
    pub tail_concave: bool,
    pub passed: bool,
    /// Per replicate, `ξ̂` at each horizon.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl GrowthReport {
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "horizon", "median", "mean", "sd", "q05", "q25", "q75", "q95", "control_median", "control_mean",
        ])?;
        for r in &self.rows {
            let q = r.xi.quantiles;
            w.write_record(
                [r.horizon, q[2], r.xi.mean, r.xi.sd, q[0], q[1], q[3], q[4], r.control.median(), r.control.mean]
                    .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plot-ready `(ε, ln P{ξ̂ > ε})` table.
    pub fn write_tail_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["level", "epsilon", "log_tail"])?;
        for t in &self.tail {
            w.write_record([t.level, t.epsilon, t.log_tail].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pair design and power tables for the sweep over `(t1, t2)`.
struct Sweep {
    alpha: f64,
    dt: f64,
    t2_nodes: Vec<usize>,
    near_gaps: Vec<usize>,
    /// `(kΔ)^{α−1}` and `(kΔ)^α`.
    pow_m1: Vec<f64>,
    pow_a: Vec<f64>,
    envelope: Vec<f64>,
}

impl Sweep {
    fn new(cfg: &GrowthConfig, grid: &TimeGrid, alpha: f64, env: GrowthEnvelope) -> Self {
        let n = grid.steps();
        let dt = grid.dt();
        let mut t2 = vec![0usize];
        let ratio = (n as f64).powf(1.0 / cfg.geometric_points.max(1) as f64);
        let mut x = 1.0f64;
        for _ in 0..cfg.geometric_points {
            t2.push((x.round() as usize).min(n - 1));
            x *= ratio;
        }
        for i in 0..cfg.uniform_points {
            t2.push(i * n / cfg.uniform_points.max(1));
        }
        t2.sort_unstable();
        t2.dedup();
        Self {
            alpha,
            dt,
            t2_nodes: t2,
            near_gaps: cfg.near_gaps.clone(),
            pow_m1: (0..=n).map(|k| (k as f64 * dt).powf(alpha - 1.0)).collect(),
            pow_a: (0..=n).map(|k| (k as f64 * dt).powf(alpha)).collect(),
            envelope: grid.times().map(|t| env.eval(t)).collect(),
        }
    }

    /// Contribution of the linear piece on cell `m` to the integral with base node `i`.
    #[inline]
    fn segment(&self, b: &[f64], i: usize, m: usize) -> f64 {
        let lo = m - i;
        let slope = (b[m + 1] - b[m]) / self.dt;
        let mut v = slope * (self.pow_a[lo + 1] - self.pow_a[lo]) / self.alpha;
        if lo > 0 {
            let intercept = b[m] - b[i] - slope * lo as f64 * self.dt;
            v += intercept * (self.pow_m1[lo] - self.pow_m1[lo + 1]) / (1.0 - self.alpha);
        }
        v
    }

    /// Running maxima over `t1 <= t_j` of `|X|/A(t1)` and `|X|`.
    fn run(&self, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = b.len() - 1;
        let mut env = vec![0.0f64; n + 1];
        let mut ctl = vec![0.0f64; n + 1];
        let mut record = |j: usize, x: f64| {
            let x = x.abs();
            env[j] = env[j].max(x / self.envelope[j]);
            ctl[j] = ctl[j].max(x);
        };
        for &i in &self.t2_nodes {
            let mut integral = 0.0;
            for j in i + 1..=n {
                integral += self.segment(b, i, j - 1);
                record(j, (b[j] - b[i]) * self.pow_m1[j - i] + integral);
            }
        }
        for &gap in &self.near_gaps {
            for j in gap..=n {
                let i = j - gap;
                let integral: f64 = (i..j).map(|m| self.segment(b, i, m)).sum();
                record(j, (b[j] - b[i]) * self.pow_m1[gap] + integral);
            }
        }
        prefix_max(&mut env);
        prefix_max(&mut ctl);
        (env, ctl)
    }
}

fn prefix_max(v: &mut [f64]) {
    for k in 1..v.len() {
        v[k] = v[k].max(v[k - 1]);
    }
}

fn sup_ratio(b: &[f64], envelope: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut env: Vec<f64> = b.iter().zip(envelope).map(|(x, a)| x.abs() / a).collect();
    let mut ctl: Vec<f64> = b.iter().map(|x| x.abs()).collect();
    prefix_max(&mut env);
    prefix_max(&mut ctl);
    (env, ctl)
}

/// Per path, `ξ̂(T) = sup |X(t)|/A(t1)` over the pair design with `t1 <= T`
/// (or `sup_{t <= T} |B^H_t|/A(t)` when `alpha` is absent), together with
/// the `A ≡ 1` control. A finite design can only under-estimate the true sup.
pub fn verify_growth_law(cfg: &GrowthConfig) -> Result<GrowthReport> {
    let grid = cfg.validate()?;
    let envelope = cfg.envelope()?;
    let generator = fbm_generator(grid, cfg.hurst)?;
    let seed = SeedPolicy::new(cfg.seed);
    let horizon_nodes: Vec<usize> = cfg
        .horizons
        .iter()
        .map(|t| ((t / grid.dt()).round() as usize).min(grid.steps()))
        .collect();
    let sweep = cfg.alpha.map(|a| Sweep::new(cfg, &grid, a.value(), envelope));
    let env_nodes: Vec<f64> = grid.times().map(|t| envelope.eval(t)).collect();

    let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let path = generator.sample(seed, i);
            let (env, ctl) = match &sweep {
                Some(s) => s.run(path.values()),
                None => sup_ratio(path.values(), &env_nodes),
            };
            (
                horizon_nodes.iter().map(|k| env[*k]).collect(),
                horizon_nodes.iter().map(|k| ctl[*k]).collect(),
            )
        })
        .collect();
    Ok(summarize_growth(cfg, envelope, per_path))
}

/// Growth study for `sup |B^H|` with `A(t) = t^H (ln t)^p ∨ 1`.
pub fn verify_sup_fbm(cfg: &GrowthConfig) -> Result<GrowthReport> {
    let cfg = GrowthConfig { alpha: None, ..cfg.clone() };
    verify_growth_law(&cfg)
}

fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min - 1.0
}

fn summarize_growth(cfg: &GrowthConfig, envelope: GrowthEnvelope, per_path: Vec<(Vec<f64>, Vec<f64>)>) -> GrowthReport {
    let columns = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, h: usize| -> Vec<f64> {
        per_path.iter().map(|p| pick(p)[h]).collect()
    };
    let rows: Vec<GrowthRow> = cfg
        .horizons
        .iter()
        .enumerate()
        .map(|(h, t)| GrowthRow {
            horizon: *t,
            xi: Summary::of(&columns(&|p| &p.0, h)),
            control: Summary::of(&columns(&|p| &p.1, h)),
        })
        .collect();
    let medians: Vec<f64> = rows.iter().map(|r| r.xi.median()).collect();
    let control: Vec<f64> = rows.iter().map(|r| r.control.median()).collect();
    let median_spread = spread(&medians);
    let control_spread = spread(&control);
    let control_grows = control.windows(2).all(|w| w[1] > w[0]) && control_spread > STABILITY_TOLERANCE;
    let pathwise_monotone = per_path.iter().all(|p| p.0.windows(2).all(|w| w[1] >= w[0]));

    let last = stats::sorted(&columns(&|p| &p.0, cfg.horizons.len() - 1));
    let tail: Vec<TailPoint> = TAIL_LEVELS
        .iter()
        .map(|q| TailPoint {
            level: *q,
            epsilon: stats::quantile_sorted(&last, *q),
            log_tail: (1.0 - q).ln(),
        })
        .collect();
    let tail_slopes: Vec<f64> =
        tail.windows(2).map(|w| (w[1].log_tail - w[0].log_tail) / (w[1].epsilon - w[0].epsilon)).collect();
    let tail_concave = tail_slopes.iter().all(|s| s.is_finite()) && tail_slopes.windows(2).all(|w| w[1] <= w[0]);
    let stable = median_spread < STABILITY_TOLERANCE;

    GrowthReport {
        config: cfg.clone(),
        envelope,
        passed: stable && control_grows && pathwise_monotone && tail_concave,
        rows,
        median_spread,
        stable,
        control_spread,
        control_grows,
        pathwise_monotone,
        tail,
        tail_slopes,
        tail_concave,
        samples: per_path.into_iter().map(|p| p.0).collect(),
    }
}
