//! Estimators of the drift parameter `θ`.
//!
//! Every stochastic integral is a left-point sum and every `ds` integral a
//! left-point sum on the same cells, so that on an Euler path with zero noise
//! the numerator is exactly `θ` times the denominator.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::HurstIndex;
use crate::grid::{GridFunction, SamplePath, TimeGrid};
use crate::molchan::{bracket_increments, chi_process, closed_j_prime, j_prime, JPrimeMethod, MolchanKernel};
use crate::sde::CoefficientSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimatorKind {
    Mle,
    Ratio,
    Mixed,
    SeqMle,
    SeqRatio,
    SeqMixed,
    OuModified,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Mle,
        EstimatorKind::Ratio,
        EstimatorKind::Mixed,
        EstimatorKind::SeqMle,
        EstimatorKind::SeqRatio,
        EstimatorKind::SeqMixed,
        EstimatorKind::OuModified,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            EstimatorKind::Mle => "MLE",
            EstimatorKind::Ratio => "RATIO",
            EstimatorKind::Mixed => "MIXED",
            EstimatorKind::SeqMle => "SEQ_MLE",
            EstimatorKind::SeqRatio => "SEQ_RATIO",
            EstimatorKind::SeqMixed => "SEQ_MIXED",
            EstimatorKind::OuModified => "OU_MODIFIED",
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, EstimatorKind::SeqMle | EstimatorKind::SeqRatio | EstimatorKind::SeqMixed)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.tag() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown estimator `{s}` (expected one of mle, ratio, mixed, seq_mle, seq_ratio, seq_mixed, ou_modified)"
                ))
            })
    }
}

/// Estimate with its numerator/denominator decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutput {
    pub kind: EstimatorKind,
    pub estimate: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// `T`, or the realized stopping time.
    pub horizon: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimatorOutput {
    fn new(kind: EstimatorKind, numerator: f64, denominator: f64, horizon: f64, condition: &'static str) -> Result<Self> {
        let tolerance = 1e-12 * horizon.max(1.0);
        if !(denominator > tolerance) || !numerator.is_finite() {
            return Err(Error::NonIdentifiable {
                denominator,
                tolerance,
                condition,
            });
        }
        Ok(Self {
            kind,
            estimate: numerator / denominator,
            numerator,
            denominator,
            horizon,
            diagnostics: BTreeMap::new(),
        })
    }

    fn diag(mut self, name: &str, value: f64) -> Self {
        self.diagnostics.insert(name.to_string(), value);
        self
    }
}

/// Writes `kind,horizon,estimate,numerator,denominator,<diagnostics...>`, one
/// row per output; diagnostics missing from a row are left empty.
pub fn write_outputs_csv<W: Write>(outputs: &[EstimatorOutput], out: W) -> Result<()> {
    let mut keys: Vec<&String> = outputs.iter().flat_map(|o| o.diagnostics.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["kind", "horizon", "estimate", "numerator", "denominator"];
    header.extend(keys.iter().map(|k| k.as_str()));
    writer.write_record(&header)?;
    for o in outputs {
        let mut row = vec![
            o.kind.tag().to_string(),
            o.horizon.to_string(),
            o.estimate.to_string(),
            o.numerator.to_string(),
            o.denominator.to_string(),
        ];
        row.extend(keys.iter().map(|k| o.diagnostics.get(*k).map(|v| v.to_string()).unwrap_or_default()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Driving noise of a simulated path, used only for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct Noise<'a> {
    pub w: &'a SamplePath,
    pub bh: &'a SamplePath,
}

/// An observed path, optionally with the noise that generated it.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub x: &'a SamplePath,
    pub noise: Option<Noise<'a>>,
}

impl<'a> Observation<'a> {
    pub fn path(x: &'a SamplePath) -> Self {
        Self { x, noise: None }
    }

    pub fn with_noise(x: &'a SamplePath, w: &'a SamplePath, bh: &'a SamplePath) -> Self {
        Self {
            x,
            noise: Some(Noise { w, bh }),
        }
    }

    fn grid(&self) -> &TimeGrid {
        self.x.grid()
    }
}

/// How `χ` is obtained for the maximum likelihood estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiMethod {
    /// Closed-form `J′` from the nonrandom `φ` and `φ′`; `χ(0) = C_H φ(0)`.
    #[default]
    Closed,
    /// Finite differences of `J`; the first cell is excluded.
    Numeric,
    /// `χ_k = ΔJ_k / Δ⟨M⟩_k` on each cell.
    Increment,
}

impl FromStr for ChiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "closed" => Ok(ChiMethod::Closed),
            "numeric" => Ok(ChiMethod::Numeric),
            "increment" => Ok(ChiMethod::Increment),
            other => Err(Error::Config(format!(
                "unknown J' method `{other}` (expected closed, numeric or increment)"
            ))),
        }
    }
}

/// Deterministic ingredients of the maximum likelihood estimators for one
/// `(grid, H, φ)`: the kernel, `χ` on each cell and the bracket increments.
#[derive(Debug, Clone)]
pub struct MleWeights {
    kernel: MolchanKernel,
    chi: Vec<f64>,
    bracket: Vec<f64>,
    dual: Vec<f64>,
    first_cell_excluded: bool,
}

impl MleWeights {
    pub fn new(grid: TimeGrid, hurst: HurstIndex, coeffs: &CoefficientSet, method: ChiMethod) -> Result<Self> {
        Self::with_kernel(MolchanKernel::new(grid, hurst.require_estimable()?), coeffs, method)
    }

    pub fn with_kernel(kernel: MolchanKernel, coeffs: &CoefficientSet, method: ChiMethod) -> Result<Self> {
        let hurst = kernel.hurst().require_estimable()?;
        let (phi, dphi) = coeffs.nonrandom_phi().ok_or_else(|| {
            Error::NotApplicable(
                "the maximum likelihood estimator needs a nonrandom phi = a/b (B2); otherwise chi depends on theta".into(),
            )
        })?;
        if !coeffs.is_c_zero() {
            return Err(Error::NotApplicable(
                "the maximum likelihood estimator is defined for c = 0 only".into(),
            ));
        }
        let grid = *kernel.grid();
        let n = grid.steps();
        let bracket = bracket_increments(&grid, hurst);
        let phi_nodes = GridFunction::from_fn(grid, |t| phi(t))?;
        let (chi, first_cell_excluded) = match method {
            ChiMethod::Closed => {
                let jm = JPrimeMethod::ClosedPhi { phi: phi.clone(), dphi };
                let jp = closed_j_prime(&kernel, &jm)?;
                let chi = chi_process(&jp, hurst)?;
                let first = jm.chi_at_zero(hurst).expect("closed phi fixes chi(0)");
                let mut cells = vec![first];
                cells.extend((1..n).map(|k| chi.get(k).expect("interior node")));
                (cells, false)
            }
            ChiMethod::Numeric => {
                let j = kernel.transform(&phi_nodes)?;
                let jp = j_prime(&j, hurst, &JPrimeMethod::Numeric)?;
                let chi = chi_process(&jp, hurst)?;
                let mut cells = vec![0.0];
                cells.extend((1..n).map(|k| chi.get(k).expect("interior node")));
                (cells, true)
            }
            ChiMethod::Increment => {
                let j = kernel.transform(&phi_nodes)?;
                let jv = j.values();
                let cells = (0..n).map(|k| (jv[k + 1] - jv[k]) / bracket[k]).collect();
                (cells, false)
            }
        };
        if let Some(k) = chi.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("chi is not finite on cell {k}")));
        }
        let dual = kernel.dual_weights(&chi);
        Ok(Self {
            kernel,
            chi,
            bracket,
            dual,
            first_cell_excluded,
        })
    }

    pub fn kernel(&self) -> &MolchanKernel {
        &self.kernel
    }

    /// `χ` on each cell (0 on an excluded first cell).
    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn bracket(&self) -> &[f64] {
        &self.bracket
    }

    /// `χ_k² Δ⟨M⟩_k`, the integrand of the stopping rule.
    pub fn information_increments(&self) -> Vec<f64> {
        self.chi.iter().zip(&self.bracket).map(|(c, b)| c * c * b).collect()
    }

    /// Numerator `Σ_k g_k ΔZ_k` from the dual weights of `g`, plus the matching
    /// martingale term when the noise is known.
    fn dual_sums(&self, dual: &[f64], obs: &Observation, coeffs: &CoefficientSet) -> Result<(f64, Option<f64>)> {
        let dy = coeffs.fbm_normalized_increments(obs.x)?;
        let num = weighted_sum(dual, &dy, dual.len());
        let term = obs.noise.map(|noise| weighted_sum(dual, &noise.bh.increments(), dual.len()));
        Ok((num, term))
    }

    /// Precomputed sequential rule for level `h`. The stopping time is
    /// deterministic because `χ` is.
    pub fn sequential(&self, level: f64) -> Result<SequentialWeights> {
        let grid = *self.kernel.grid();
        let stop = stopping_from_increments(&grid, &self.information_increments(), level)?;
        if !stop.hit {
            return Err(not_hit(&stop));
        }
        let k = stop.cell.expect("hit");
        let mut g = vec![0.0; grid.steps()];
        g[..k].copy_from_slice(&self.chi[..k]);
        g[k] = stop.fraction * self.chi[k];
        Ok(SequentialWeights {
            dual: self.kernel.dual_weights(&g),
            stop,
            first_cell_excluded: self.first_cell_excluded,
        })
    }
}

/// Stopping time and dual weights of `SEQ_MLE` at one level.
#[derive(Debug, Clone)]
pub struct SequentialWeights {
    dual: Vec<f64>,
    stop: StoppingResult,
    first_cell_excluded: bool,
}

impl SequentialWeights {
    pub fn stopping(&self) -> &StoppingResult {
        &self.stop
    }
}

/// `θ⁽¹⁾_T = ∫ χ dZ / ∫ χ² d⟨M⟩`.
pub fn estimate_mle(obs: &Observation, coeffs: &CoefficientSet, hurst: HurstIndex, method: ChiMethod) -> Result<EstimatorOutput> {
    let weights = MleWeights::new(*obs.grid(), hurst, coeffs, method)?;
    estimate_mle_with(&weights, obs, coeffs)
}

/// [`estimate_mle`] with precomputed weights.
pub fn estimate_mle_with(weights: &MleWeights, obs: &Observation, coeffs: &CoefficientSet) -> Result<EstimatorOutput> {
    let grid = *obs.grid();
    grid.ensure_same(weights.kernel.grid(), "MLE weights")?;
    let (num, term) = weights.dual_sums(&weights.dual, obs, coeffs)?;
    let den: f64 = weights.information_increments().iter().sum();
    let mut out = EstimatorOutput::new(EstimatorKind::Mle, num, den, grid.horizon(), "B3: I_T must be positive")?
        .diag("first_cell_excluded", if weights.first_cell_excluded { 1.0 } else { 0.0 });
    if let (Some(term), Some(noise)) = (term, obs.noise) {
        let n = grid.steps();
        let m_t = weights.kernel.integrate_increments_at(n, &noise.bh.increments());
        out = out
            .diag("martingale_term", term / den)
            .diag("molchan_martingale_terminal", m_t);
    }
    Ok(out)
}

fn weighted_sum(weights: &[f64], increments: &[f64], cells: usize) -> f64 {
    weights.iter().zip(increments).take(cells).map(|(w, d)| w * d).sum()
}

/// `θ⁽²⁾_T = ∫ φ dY / ∫ φ² ds`, `Y = ∫ b^{−1} dX`.
pub fn estimate_ratio(obs: &Observation, coeffs: &CoefficientSet) -> Result<EstimatorOutput> {
    let grid = *obs.grid();
    let n = grid.steps();
    let phi = coeffs.phi_path(obs.x)?;
    let dy = coeffs.fbm_normalized_increments(obs.x)?;
    let dt = grid.dt();
    let num = weighted_sum(&phi, &dy, n);
    let den: f64 = phi[..n].iter().map(|p| p * p * dt).sum();
    let mut out = EstimatorOutput::new(EstimatorKind::Ratio, num, den, grid.horizon(), "B3: integral of phi^2 must be positive")?;
    if let Some(noise) = obs.noise {
        out = ratio_noise_terms(out, obs, coeffs, &phi, noise, n, den)?;
    }
    Ok(out)
}

fn ratio_noise_terms(
    out: EstimatorOutput,
    obs: &Observation,
    coeffs: &CoefficientSet,
    phi: &[f64],
    noise: Noise,
    cells: usize,
    den: f64,
) -> Result<EstimatorOutput> {
    let db = noise.bh.increments();
    let fbm = weighted_sum(phi, &db, cells) / den;
    let mut out = out.diag("fbm_term", fbm);
    if !coeffs.is_c_zero() {
        let grid = obs.grid();
        let dw = noise.w.increments();
        let x = obs.x.values();
        let wiener: f64 = (0..cells)
            .map(|k| {
                let t = grid.time(k);
                phi[k] * coeffs.c(t, x[k]) / coeffs.b(t, x[k]) * dw[k]
            })
            .sum::<f64>()
            / den;
        out = out.diag("wiener_term", wiener);
    }
    Ok(out)
}

/// `θ⁽³⁾_T = ∫ φ₁ dY / ∫ φ₁² ds`, `Y = ∫ c^{−1} dX`, `φ₁ = a/c`.
pub fn estimate_mixed(obs: &Observation, coeffs: &CoefficientSet) -> Result<EstimatorOutput> {
    let grid = *obs.grid();
    let n = grid.steps();
    let phi1 = coeffs.phi1_path(obs.x)?;
    let dy = coeffs.brownian_normalized_increments(obs.x)?;
    let dt = grid.dt();
    let num = weighted_sum(&phi1, &dy, n);
    let den: f64 = phi1[..n].iter().map(|p| p * p * dt).sum();
    let mut out = EstimatorOutput::new(EstimatorKind::Mixed, num, den, grid.horizon(), "C3: integral of phi1^2 must be positive")?;
    if let Some(noise) = obs.noise {
        out = mixed_noise_terms(out, obs, coeffs, &phi1, noise, n, den)?;
    }
    Ok(out)
}

fn mixed_noise_terms(
    out: EstimatorOutput,
    obs: &Observation,
    coeffs: &CoefficientSet,
    phi1: &[f64],
    noise: Noise,
    cells: usize,
    den: f64,
) -> Result<EstimatorOutput> {
    let phi2 = coeffs.phi2_path(obs.x)?;
    let db = noise.bh.increments();
    let dw = noise.w.increments();
    let fbm: f64 = (0..cells).map(|k| phi1[k] * phi2[k] * db[k]).sum::<f64>() / den;
    let wiener = weighted_sum(phi1, &dw, cells) / den;
    Ok(out.diag("fbm_term", fbm).diag("wiener_term", wiener))
}

/// Measure against which the stopping integrand is accumulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingWeight {
    /// `ds`
    Lebesgue,
    /// `d⟨M⟩_s = (2−2H) s^{1−2H} ds`, exact per cell.
    Bracket(HurstIndex),
}

/// First passage of `∫ f dμ` through a level `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingResult {
    pub level: f64,
    pub hit: bool,
    /// Interpolated crossing time, or the horizon when not hit.
    pub time: f64,
    /// `h` when hit, the total accumulation otherwise.
    pub accumulated: f64,
    /// Accumulation at the right end of the crossing cell, in `[h, h + one cell]`.
    pub node_accumulated: f64,
    /// Crossing cell and the fraction of it used.
    pub cell: Option<usize>,
    pub fraction: f64,
}

/// Stopping rule from per-cell increments `f_k μ(cell k)`.
pub fn stopping_from_increments(grid: &TimeGrid, increments: &[f64], level: f64) -> Result<StoppingResult> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::Domain(format!("stopping level must be positive, got {level}")));
    }
    let mut acc = 0.0;
    for (k, &inc) in increments.iter().enumerate() {
        if inc < 0.0 || !inc.is_finite() {
            return Err(Error::Domain(format!("stopping increment on cell {k} is {inc}; must be nonnegative")));
        }
        let next = acc + inc;
        if next >= level {
            let fraction = (level - acc) / inc;
            return Ok(StoppingResult {
                level,
                hit: true,
                time: grid.time(k) + fraction * grid.dt(),
                accumulated: level,
                node_accumulated: next,
                cell: Some(k),
                fraction,
            });
        }
        acc = next;
    }
    Ok(StoppingResult {
        level,
        hit: false,
        time: grid.horizon(),
        accumulated: acc,
        node_accumulated: acc,
        cell: None,
        fraction: 0.0,
    })
}

/// `inf{t : ∫_0^t f dμ = h}` with `f` taken at the left node of each cell.
pub fn stopping_time(integrand: &GridFunction, weight: StoppingWeight, level: f64) -> Result<StoppingResult> {
    let grid = *integrand.grid();
    let f = integrand.values();
    let increments: Vec<f64> = match weight {
        StoppingWeight::Lebesgue => f[..grid.steps()].iter().map(|v| v * grid.dt()).collect(),
        StoppingWeight::Bracket(h) => bracket_increments(&grid, h)
            .iter()
            .zip(f)
            .map(|(b, v)| v * b)
            .collect(),
    };
    stopping_from_increments(&grid, &increments, level)
}

fn truncated_sum(weights: &[f64], increments: &[f64], stop: &StoppingResult) -> f64 {
    let k = stop.cell.expect("hit");
    weighted_sum(weights, increments, k) + stop.fraction * weights[k] * increments[k]
}

fn not_hit(stop: &StoppingResult) -> Error {
    Error::NotHit {
        level: stop.level,
        horizon: stop.time,
        accumulated: stop.accumulated,
    }
}

/// `θ⁽¹⁾_{τ(h)} = ∫_0^{τ(h)} χ dZ / h`.
pub fn estimate_seq_mle_with(weights: &MleWeights, obs: &Observation, coeffs: &CoefficientSet, level: f64) -> Result<(EstimatorOutput, StoppingResult)> {
    grid_check(weights, obs)?;
    let seq = weights.sequential(level)?;
    estimate_seq_mle_prepared(weights, &seq, obs, coeffs)
}

/// `SEQ_MLE` with the stopping rule already prepared for its level.
pub fn estimate_seq_mle_prepared(
    weights: &MleWeights,
    seq: &SequentialWeights,
    obs: &Observation,
    coeffs: &CoefficientSet,
) -> Result<(EstimatorOutput, StoppingResult)> {
    grid_check(weights, obs)?;
    let stop = seq.stop;
    let (num, term) = weights.dual_sums(&seq.dual, obs, coeffs)?;
    let mut out = EstimatorOutput::new(EstimatorKind::SeqMle, num, stop.level, stop.time, "stopping level must be positive")?
        .diag("stopping_time", stop.time)
        .diag("first_cell_excluded", if seq.first_cell_excluded { 1.0 } else { 0.0 });
    if let Some(term) = term {
        out = out.diag("martingale_term", term / stop.level);
    }
    Ok((out, stop))
}

fn grid_check(weights: &MleWeights, obs: &Observation) -> Result<()> {
    obs.grid().ensure_same(weights.kernel.grid(), "MLE weights")
}

/// Sequential estimator selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SequentialKind {
    Mle(ChiMethod),
    Ratio,
    Mixed,
}

/// Sequential estimate at level `h`: `SEQ_MLE` stops at `τ(h)` on
/// `∫ χ² d⟨M⟩`, `SEQ_RATIO` at `∫ φ² ds = h`, `SEQ_MIXED` at `υ(h)` on
/// `∫ φ₁² ds`. The denominator is exactly `h`.
pub fn estimate_sequential(
    obs: &Observation,
    coeffs: &CoefficientSet,
    hurst: HurstIndex,
    level: f64,
    kind: SequentialKind,
) -> Result<(EstimatorOutput, StoppingResult)> {
    let grid = *obs.grid();
    let dt = grid.dt();
    let (estimator, phi, dy) = match kind {
        SequentialKind::Mle(method) => {
            let weights = MleWeights::new(grid, hurst, coeffs, method)?;
            return estimate_seq_mle_with(&weights, obs, coeffs, level);
        }
        SequentialKind::Ratio => (
            EstimatorKind::SeqRatio,
            coeffs.phi_path(obs.x)?,
            coeffs.fbm_normalized_increments(obs.x)?,
        ),
        SequentialKind::Mixed => (
            EstimatorKind::SeqMixed,
            coeffs.phi1_path(obs.x)?,
            coeffs.brownian_normalized_increments(obs.x)?,
        ),
    };
    let n = grid.steps();
    let info: Vec<f64> = phi[..n].iter().map(|p| p * p * dt).collect();
    let stop = stopping_from_increments(&grid, &info, level)?;
    if !stop.hit {
        return Err(not_hit(&stop));
    }
    let num = truncated_sum(&phi, &dy, &stop);
    let mut out = EstimatorOutput::new(estimator, num, level, stop.time, "stopping level must be positive")?
        .diag("stopping_time", stop.time);
    if let Some(noise) = obs.noise {
        let cells = stop.cell.expect("hit") + 1;
        let truncated = |o: EstimatorOutput| -> Result<EstimatorOutput> {
            // Noise terms truncated at the stopping time.
            let mut scaled = phi.clone();
            let k = cells - 1;
            scaled[k] *= stop.fraction;
            let den = level;
            match estimator {
                EstimatorKind::SeqRatio => ratio_noise_terms(o, obs, coeffs, &scaled, noise, cells, den),
                _ => mixed_noise_terms(o, obs, coeffs, &scaled, noise, cells, den),
            }
        };
        out = truncated(out)?;
    }
    Ok((out, stop))
}

/// `θ̃⁽²⁾_T = ∫ e^{−2ϑs} X dX / ∫ e^{−2ϑs} X² ds` for `dX = θX dt + dB^H`,
/// with the weight exponent `ϑ` supplied by the caller.
///
/// With noise attached, `noise_term` is the exact discrete error
/// `Σ e^{−2ϑt_k} X_k ΔB_k / denominator`, and `representation_estimate` is
/// `ϑ + (U_T² − U_0²)/(2∫U² ds)` with `U_t = X_0 + ∫_0^t e^{−ϑs} dB^H_s`,
/// which equals the estimate up to discretization when `ϑ = θ`.
pub fn estimate_ou_modified(obs: &Observation, theta_weight: f64) -> Result<EstimatorOutput> {
    let grid = *obs.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let x = obs.x.values();
    let discount: Vec<f64> = (0..n).map(|k| (-2.0 * theta_weight * grid.time(k)).exp()).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..n {
        num += discount[k] * x[k] * (x[k + 1] - x[k]);
        den += discount[k] * x[k] * x[k] * dt;
    }
    let mut out = EstimatorOutput::new(EstimatorKind::OuModified, num, den, grid.horizon(), "weighted energy must be positive")?
        .diag("theta_weight", theta_weight);
    if let Some(noise) = obs.noise {
        let db = noise.bh.increments();
        let noise_term: f64 = (0..n).map(|k| discount[k] * x[k] * db[k]).sum::<f64>() / den;
        let mut u = x[0];
        let mut energy = 0.0;
        for (k, d) in db.iter().enumerate() {
            energy += u * u * dt;
            let s0 = grid.time(k);
            // Exact cell average of e^{−ϑs}.
            let avg = if theta_weight == 0.0 {
                1.0
            } else {
                (-theta_weight * s0).exp() * (-(-theta_weight * dt).exp_m1()) / (theta_weight * dt)
            };
            u += avg * d;
        }
        let representation = theta_weight + (u * u - x[0] * x[0]) / (2.0 * energy);
        out = out
            .diag("noise_term", noise_term)
            .diag("representation_estimate", representation);
    }
    Ok(out)
}
