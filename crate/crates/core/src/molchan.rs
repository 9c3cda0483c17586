//! The Molchan kernel `l_H(t,s) = c_H s^{1/2−H}(t−s)^{1/2−H}` on `0 < s < t`
//! and the processes built from it: `J`, `J′`, `χ`, the martingale `M^H` and
//! the observable `Z`.
//!
//! On a uniform grid the exact cell integrals are
//! `∫_{t_j}^{t_{j+1}} l_H(t_k, s) ds = c_H Δ^{2−2H} m(k, j)` with
//! `m(k, j) = ∫_j^{j+1} v^β (k−v)^β dv`, `β = 1/2 − H`. The two end cells
//! carry the singularities and are incomplete Beta integrals; interior cells
//! are smooth and use an 8-point Gauss–Legendre rule.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::HurstIndex;
use crate::grid::{GridFunction, PartialGridFunction, PathMeta, SamplePath, TimeGrid};
use crate::sde::CoefficientSet;
use crate::special::{beta, beta_reg, gamma, GAUSS_LEGENDRE_8};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MolchanConstants {
    pub hurst: HurstIndex,
    pub c_h: f64,
    pub big_c_h: f64,
}

impl MolchanConstants {
    pub fn new(hurst: HurstIndex) -> Self {
        let h = hurst.value();
        let c_h = (gamma(3.0 - 2.0 * h)
            / (2.0 * h * gamma(1.5 - h).powi(3) * gamma(h + 0.5)))
        .sqrt();
        let big_c_h = (gamma(1.5 - h) / (2.0 * h * gamma(h + 0.5) * gamma(3.0 - 2.0 * h))).sqrt();
        Self {
            hurst,
            c_h,
            big_c_h,
        }
    }

    /// Relative gap between `C_H` and `B(3/2−H, 3/2−H) c_H`.
    pub fn consistency_gap(&self) -> f64 {
        let a = 1.5 - self.hurst.value();
        let via_beta = beta(a, a) * self.c_h;
        (via_beta - self.big_c_h).abs() / self.big_c_h
    }
}

pub fn molchan_kernel(t: f64, s: f64, hurst: HurstIndex) -> f64 {
    if !(s > 0.0 && s < t) {
        return 0.0;
    }
    let b = 0.5 - hurst.value();
    MolchanConstants::new(hurst).c_h * s.powf(b) * (t - s).powf(b)
}

/// Grids up to this many steps keep every cell weight in memory.
pub const WEIGHT_TABLE_MAX_STEPS: usize = 2048;

/// Cell integrals of `l_H(t_k, ·)` for one `(grid, H)`. Immutable once built
/// and safe to share between threads.
#[derive(Debug, Clone)]
pub struct MolchanKernel {
    grid: TimeGrid,
    consts: MolchanConstants,
    beta: f64,
    scale: f64,
    /// `(j + x_i)^β` at the quadrature nodes of cell `j`.
    nodes: Vec<[f64; 8]>,
    /// `m(k, 0)` for `k = 0..=n` (entry 0 unused).
    end_cell: Vec<f64>,
    /// Lower-triangular `m(k, j)`, row `k` starting at `k(k−1)/2`.
    table: Option<Vec<f64>>,
}

impl MolchanKernel {
    pub fn new(grid: TimeGrid, hurst: HurstIndex) -> Self {
        let n = grid.steps();
        let h = hurst.value();
        let b = 0.5 - h;
        let a = b + 1.0;
        let consts = MolchanConstants::new(hurst);
        let nodes = (0..n)
            .map(|j| {
                let mut row = [0.0; 8];
                for (r, &(x, _)) in row.iter_mut().zip(&GAUSS_LEGENDRE_8) {
                    *r = (j as f64 + x).powf(b);
                }
                row
            })
            .collect();
        let full = beta(a, a);
        let end_cell = (0..=n)
            .map(|k| match k {
                0 => 0.0,
                1 => full,
                _ => {
                    let kf = k as f64;
                    kf.powf(2.0 * b + 1.0) * full * beta_reg(a, a, 1.0 / kf)
                }
            })
            .collect();
        let mut kernel = Self {
            grid,
            consts,
            beta: b,
            scale: consts.c_h * grid.dt().powf(2.0 - 2.0 * h),
            nodes,
            end_cell,
            table: None,
        };
        if n <= WEIGHT_TABLE_MAX_STEPS {
            let mut table = Vec::with_capacity(n * (n + 1) / 2);
            for k in 1..=n {
                table.extend((0..k).map(|j| kernel.raw(k, j)));
            }
            kernel.table = Some(table);
        }
        kernel
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstIndex {
        self.consts.hurst
    }

    pub fn constants(&self) -> &MolchanConstants {
        &self.consts
    }

    fn raw(&self, k: usize, j: usize) -> f64 {
        if j == 0 || j + 1 == k {
            return self.end_cell[k];
        }
        if self.beta == 0.0 {
            return 1.0;
        }
        let left = &self.nodes[j];
        let right = &self.nodes[k - 1 - j];
        let mut acc = 0.0;
        for i in 0..8 {
            acc += GAUSS_LEGENDRE_8[i].1 * left[i] * right[7 - i];
        }
        acc
    }

    fn m(&self, k: usize, j: usize) -> f64 {
        match &self.table {
            Some(t) => t[k * (k - 1) / 2 + j],
            None => self.raw(k, j),
        }
    }

    /// `∫_{t_j}^{t_{j+1}} l_H(t_k, s) ds` for `j < k`.
    pub fn weight(&self, k: usize, j: usize) -> f64 {
        assert!(j < k && k <= self.grid.steps(), "cell {j} is not below node {k}");
        self.scale * self.m(k, j)
    }

    /// `Σ_{j<k} w(k, j) v_j`.
    pub fn apply_at(&self, k: usize, cell_values: &[f64]) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let sum: f64 = match &self.table {
            Some(t) => {
                let row = &t[k * (k - 1) / 2..k * (k + 1) / 2];
                row.iter().zip(cell_values).map(|(m, v)| m * v).sum()
            }
            None => (0..k).map(|j| self.raw(k, j) * cell_values[j]).sum(),
        };
        self.scale * sum
    }

    /// [`Self::apply_at`] at every node.
    pub fn apply(&self, cell_values: &[f64]) -> Vec<f64> {
        assert_eq!(cell_values.len(), self.grid.steps());
        (0..=self.grid.steps())
            .map(|k| self.apply_at(k, cell_values))
            .collect()
    }

    /// `J_t = ∫_0^t l_H(t,s) φ(s) ds` with `φ` constant on each cell at its
    /// left-node value.
    pub fn transform(&self, phi: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(phi.grid(), "Molchan transform")?;
        let cells = &phi.values()[..self.grid.steps()];
        GridFunction::new(self.grid, self.apply(cells))
    }

    /// `∫_0^t l_H(t,s) dY_s` from the increments of `Y`.
    pub fn integrate_increments(&self, increments: &[f64]) -> Vec<f64> {
        let inv_dt = 1.0 / self.grid.dt();
        let density: Vec<f64> = increments.iter().map(|d| d * inv_dt).collect();
        self.apply(&density)
    }

    /// `∫_0^{t_k} l_H(t_k,s) dY_s` at a single node.
    pub fn integrate_increments_at(&self, k: usize, increments: &[f64]) -> f64 {
        self.apply_at(k, increments) / self.grid.dt()
    }

    /// `M^H_t = ∫_0^t l_H(t,s) dB^H_s`.
    pub fn martingale(&self, bh: &SamplePath) -> Result<SamplePath> {
        self.grid.ensure_same(bh.grid(), "Molchan martingale")?;
        let values = self.integrate_increments(&bh.increments());
        SamplePath::new(self.grid, values, PathMeta { generator: "molchan-martingale".into(), ..bh.meta.clone() })
    }

    /// `Z_t = ∫_0^t l_H(t,s) b^{−1}(s,X_s) dX_s`.
    pub fn z_process(&self, x: &SamplePath, coeffs: &CoefficientSet) -> Result<SamplePath> {
        self.grid.ensure_same(x.grid(), "Z process")?;
        let dy = coeffs.fbm_normalized_increments(x)?;
        let values = self.integrate_increments(&dy);
        SamplePath::new(self.grid, values, PathMeta { generator: "z-process".into(), ..x.meta.clone() })
    }

    /// Weights `c_j` with `Σ_k g_k (V_{k+1} − V_k) = Σ_j c_j ΔY_j` for
    /// `V = ∫ l_H(·, s) dY_s`, so that integrals of a deterministic `g` against
    /// `dZ` or `dM^H` cost one pass over the increments.
    ///
    /// Summation by parts gives
    /// `c_j Δ = g_K W(K+1, j) + Σ_{j<k≤K} (g_{k−1} − g_k) W(k, j)`, and only the
    /// jumps of `g` enter, so piecewise-constant `g` costs `O(n)` per jump.
    pub fn dual_weights(&self, g: &[f64]) -> Vec<f64> {
        let n = self.grid.steps();
        assert_eq!(g.len(), n);
        let last = match g.iter().rposition(|v| *v != 0.0) {
            Some(k) => k,
            None => return vec![0.0; n],
        };
        let size = g[..=last].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let jumps: Vec<(usize, f64)> = (1..=last)
            .map(|k| (k, g[k - 1] - g[k]))
            .filter(|(_, d)| d.abs() > 1e-14 * size)
            .collect();
        let factor = self.scale / self.grid.dt();
        (0..n)
            .map(|j| {
                if j > last {
                    return 0.0;
                }
                let mut acc = g[last] * self.m(last + 1, j);
                let from = jumps.partition_point(|(k, _)| *k <= j);
                for &(k, d) in &jumps[from..] {
                    acc += d * self.m(k, j);
                }
                factor * acc
            })
            .collect()
    }

    /// Exact increments of the bracket `⟨M⟩_t = t^{2−2H}` per cell.
    pub fn bracket_increments(&self) -> Vec<f64> {
        bracket_increments(&self.grid, self.hurst())
    }
}

pub fn bracket_increments(grid: &TimeGrid, hurst: HurstIndex) -> Vec<f64> {
    let p = 2.0 - 2.0 * hurst.value();
    (0..grid.steps())
        .map(|k| grid.time(k + 1).powf(p) - grid.time(k).powf(p))
        .collect()
}

pub fn molchan_transform(phi: &GridFunction, hurst: HurstIndex) -> Result<GridFunction> {
    MolchanKernel::new(*phi.grid(), hurst).transform(phi)
}

pub fn molchan_martingale(bh: &SamplePath, hurst: HurstIndex) -> Result<SamplePath> {
    MolchanKernel::new(*bh.grid(), hurst).martingale(bh)
}

pub fn z_process(x: &SamplePath, coeffs: &CoefficientSet, hurst: HurstIndex) -> Result<SamplePath> {
    MolchanKernel::new(*x.grid(), hurst).z_process(x, coeffs)
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How `J′` is obtained.
#[derive(Clone, Default)]
pub enum JPrimeMethod {
    /// Finite differences of `J`: central inside, second-order one-sided at
    /// `T`, undefined at `0`.
    #[default]
    Numeric,
    /// Nonrandom `φ` with derivative `φ′`:
    /// `J′(t) = (2−2H)C_H φ(0) t^{1−2H} + ∫_0^t l_H(t,s)[φ′(s) − (H−½)(φ(s)−φ(0))/s] ds`.
    ClosedPhi { phi: ScalarFn, dphi: ScalarFn },
    /// `ς(s) = s^{1/2−H} φ(s)` with known `ς(0)` and `ς′`:
    /// `J′(t) = c_H t^{1/2−H} ς(0) + c_H ∫_0^t (t−s)^{1/2−H} ς′(s) ds`.
    ClosedVarsigma { varsigma0: f64, dvarsigma: ScalarFn },
}

impl std::fmt::Debug for JPrimeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            JPrimeMethod::Numeric => "Numeric",
            JPrimeMethod::ClosedPhi { .. } => "ClosedPhi",
            JPrimeMethod::ClosedVarsigma { .. } => "ClosedVarsigma",
        })
    }
}

impl JPrimeMethod {
    pub fn closed_phi(phi: impl Fn(f64) -> f64 + Send + Sync + 'static, dphi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        JPrimeMethod::ClosedPhi {
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
        }
    }

    pub fn closed_varsigma(varsigma0: f64, dvarsigma: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        JPrimeMethod::ClosedVarsigma {
            varsigma0,
            dvarsigma: Arc::new(dvarsigma),
        }
    }

    /// `lim_{t→0} χ(t)` when the method determines it.
    pub fn chi_at_zero(&self, hurst: HurstIndex) -> Option<f64> {
        match self {
            JPrimeMethod::ClosedPhi { phi, .. } => Some(MolchanConstants::new(hurst).big_c_h * phi(0.0)),
            _ => None,
        }
    }
}

/// `J′` at the nodes of `j`'s grid.
pub fn j_prime(j: &GridFunction, hurst: HurstIndex, method: &JPrimeMethod) -> Result<PartialGridFunction> {
    let grid = *j.grid();
    match method {
        JPrimeMethod::Numeric => Ok(numeric_derivative(j)),
        JPrimeMethod::ClosedPhi { .. } | JPrimeMethod::ClosedVarsigma { .. } => {
            let kernel = MolchanKernel::new(grid, hurst);
            closed_j_prime(&kernel, method)
        }
    }
}

fn numeric_derivative(j: &GridFunction) -> PartialGridFunction {
    let grid = *j.grid();
    let n = grid.steps();
    let v = j.values();
    let dt = grid.dt();
    let mut out = vec![None; n + 1];
    for k in 1..n {
        out[k] = Some((v[k + 1] - v[k - 1]) / (2.0 * dt));
    }
    out[n] = Some((3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * dt));
    PartialGridFunction::new(grid, out)
}

/// Closed-form `J′` on the kernel's grid. `Numeric` is rejected.
pub fn closed_j_prime(kernel: &MolchanKernel, method: &JPrimeMethod) -> Result<PartialGridFunction> {
    let grid = *kernel.grid();
    let n = grid.steps();
    let h = kernel.hurst().value();
    let consts = *kernel.constants();
    let mid = |j: usize| 0.5 * (grid.time(j) + grid.time(j + 1));
    let mut out = vec![None; n + 1];
    match method {
        JPrimeMethod::Numeric => {
            return Err(Error::NotApplicable("closed J' needs a closed-form method".into()))
        }
        JPrimeMethod::ClosedPhi { phi, dphi } => {
            let phi0 = phi(0.0);
            let bracket: Vec<f64> = (0..n)
                .map(|j| {
                    let s = mid(j);
                    dphi(s) - (h - 0.5) * (phi(s) - phi0) / s
                })
                .collect();
            if h == 0.5 {
                out[0] = Some(phi0);
            }
            for k in 1..=n {
                let t = grid.time(k);
                let lead = (2.0 - 2.0 * h) * consts.big_c_h * phi0 * t.powf(1.0 - 2.0 * h);
                out[k] = Some(lead + kernel.apply_at(k, &bracket));
            }
        }
        JPrimeMethod::ClosedVarsigma { varsigma0, dvarsigma } => {
            let b = 0.5 - h;
            let a = b + 1.0;
            let slope: Vec<f64> = (0..n).map(|j| dvarsigma(mid(j))).collect();
            if h == 0.5 {
                out[0] = Some(consts.c_h * varsigma0);
            }
            for k in 1..=n {
                let t = grid.time(k);
                let mut acc = 0.0;
                for (j, s) in slope.iter().enumerate().take(k) {
                    let hi = t - grid.time(j);
                    let lo = (t - grid.time(j + 1)).max(0.0);
                    acc += s * (hi.powf(a) - lo.powf(a)) / a;
                }
                out[k] = Some(consts.c_h * (t.powf(b) * varsigma0 + acc));
            }
        }
    }
    Ok(PartialGridFunction::new(grid, out))
}

/// `χ(t) = J′(t) t^{2H−1} / (2−2H)`; boundary nodes of `J′` stay boundary.
pub fn chi_process(j_prime: &PartialGridFunction, hurst: HurstIndex) -> Result<PartialGridFunction> {
    let h = hurst.value();
    if h >= 1.0 {
        return Err(Error::HurstOutOfRange(h));
    }
    let grid = *j_prime.grid();
    let values = j_prime
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.map(|jp| {
                let t = grid.time(k);
                let factor = if h == 0.5 { 1.0 } else { t.powf(2.0 * h - 1.0) };
                jp * factor / (2.0 - 2.0 * h)
            })
        })
        .collect();
    Ok(PartialGridFunction::new(grid, values))
}
