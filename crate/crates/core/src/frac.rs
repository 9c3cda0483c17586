//! Fractional derivatives and the generalized Lebesgue–Stieltjes integral.
//!
//! Everything is real-valued. The backward derivative uses the convention
//! `g_{b−}(x) = g(b) − g(x)`, under which
//! `∫ f dg = ∫ (D^α_{a+} f)(x) (D^{1−α}_{b−} g_{b−})(x) dx` reproduces the
//! Riemann–Stieltjes integral for smooth `g`.
//!
//! Grid data is treated as piecewise linear, and every weakly singular
//! integral is evaluated cell by cell with exact power-kernel moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::HurstIndex;
use crate::grid::{GridFunction, PartialGridFunction, TimeGrid};
use crate::special::{gamma, GAUSS_LEGENDRE_8};

/// Order `α` of a fractional derivative, `0 < α < 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidOrder {
                alpha,
                reason: "must lie in (0, 1)".into(),
            })
        }
    }

    /// Order admissible for integrating against an fBm path: `1 − H < α < 1`.
    pub fn for_fbm(alpha: f64, hurst: HurstIndex) -> Result<Self> {
        let order = Self::new(alpha)?;
        if alpha > 1.0 - hurst.value() {
            Ok(order)
        } else {
            Err(Error::InvalidOrder {
                alpha,
                reason: format!("integration against fBm with H = {} needs alpha > {}", hurst.value(), 1.0 - hurst.value()),
            })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FractionalOrder {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FractionalOrder> for f64 {
    fn from(a: FractionalOrder) -> f64 {
        a.0
    }
}

/// Index of the node at time `t`; `t` must sit on the grid.
pub(crate) fn node_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    let k = (t / grid.dt()).round();
    if k < 0.0 || k as usize > grid.steps() || (t - grid.time(k as usize)).abs() > 1e-9 * grid.dt() {
        return Err(Error::Domain(format!("t = {t} is not a node of the grid")));
    }
    Ok(k as usize)
}

/// `l^p` for `l = 0..len`, with `0^p` stored as 0 for any `p`.
fn power_table(len: usize, p: f64) -> Vec<f64> {
    (0..len)
        .map(|l| if l == 0 { 0.0 } else { (l as f64).powf(p) })
        .collect()
}

/// Left-sided Marchaud derivative `D^α_{a+} f` at every node.
///
/// Nodes at or before `a` are boundary nodes.
pub fn frac_deriv_forward(f: &GridFunction, alpha: FractionalOrder, a: f64) -> Result<PartialGridFunction> {
    let grid = *f.grid();
    let start = node_index(&grid, a)?;
    let n = grid.steps();
    let al = alpha.value();
    let dt = grid.dt();
    let v = f.values();
    let neg = power_table(n + 1, -al);
    let pos = power_table(n + 2, 1.0 - al);
    let lo_scale = dt.powf(-al);
    let mom_scale = al * dt.powf(1.0 - al) / (1.0 - al);
    let norm = 1.0 / gamma(1.0 - al);

    let mut out = vec![None; n + 1];
    for k in start + 1..=n {
        let mut sum = 0.0;
        for j in start..k {
            let l = k - j - 1;
            let d = v[j + 1] - v[j];
            if l > 0 {
                let a_coef = v[k] - v[j] - d * (l + 1) as f64;
                sum += a_coef * lo_scale * (neg[l] - neg[l + 1]);
            }
            sum += (d / dt) * mom_scale * (pos[l + 1] - pos[l]);
        }
        let dist = (k - start) as f64 * dt;
        out[k] = Some(norm * (v[k] * dist.powf(-al) + sum));
    }
    Ok(PartialGridFunction::new(grid, out))
}

/// Right-sided derivative `D^{1−α}_{b−} g_{b−}` at every node, in the real form
/// `(1/Γ(α))[g_{b−}(s)/(b−s)^{1−α} + (1−α)∫_s^b (g(u)−g(s))/(u−s)^{2−α} du]`.
///
/// Nodes at or after `b` are boundary nodes.
pub fn frac_deriv_backward(g: &GridFunction, alpha: FractionalOrder, b: f64) -> Result<PartialGridFunction> {
    let grid = *g.grid();
    let end = node_index(&grid, b)?;
    let n = grid.steps();
    let al = alpha.value();
    let dt = grid.dt();
    let v = g.values();
    let neg = power_table(n + 2, al - 1.0);
    let pos = power_table(n + 2, al);
    let lo_scale = dt.powf(al - 1.0);
    let mom_scale = (1.0 - al) * dt.powf(al) / al;
    let norm = 1.0 / gamma(al);

    let mut out = vec![None; n + 1];
    for k in 0..end {
        let mut sum = 0.0;
        for j in k..end {
            let l = j - k;
            let d = v[j + 1] - v[j];
            if l > 0 {
                let a_coef = v[j] - v[k] - d * l as f64;
                sum += a_coef * lo_scale * (neg[l] - neg[l + 1]);
            }
            sum += (d / dt) * mom_scale * (pos[l + 1] - pos[l]);
        }
        let dist = (end - k) as f64 * dt;
        out[k] = Some(norm * ((v[end] - v[k]) * dist.powf(al - 1.0) + sum));
    }
    Ok(PartialGridFunction::new(grid, out))
}

/// Pieces shared by the integral and its bound: `q(x) = x^α D^α f(x)` and
/// `G(x) = D^{1−α} g_{b−}(x)` at every node (boundary values replaced by their
/// limits `q(0) = f(0)/Γ(1−α)`, `G(T) = 0`), and the cell weights of
/// `∫ x^{−α} (linear interpolant) dx`.
struct Pairing {
    q: Vec<f64>,
    g: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

fn pairing(f: &GridFunction, g: &GridFunction, alpha: FractionalOrder) -> Result<Pairing> {
    let grid = *f.grid();
    grid.ensure_same(g.grid(), "generalized Stieltjes integral")?;
    let n = grid.steps();
    let al = alpha.value();
    let dt = grid.dt();
    let fwd = frac_deriv_forward(f, alpha, 0.0)?;
    let bwd = frac_deriv_backward(g, alpha, grid.horizon())?;

    let mut q = Vec::with_capacity(n + 1);
    q.push(f.values()[0] / gamma(1.0 - al));
    for k in 1..=n {
        q.push(grid.time(k).powf(al) * fwd.get(k).expect("interior node"));
    }
    let mut gv: Vec<f64> = (0..n).map(|k| bwd.get(k).expect("interior node")).collect();
    gv.push(0.0);

    // Weights in units of Δ^{1−α}: ∫_k^{k+1} y^{−α}(k+1−y) dy and ∫ y^{−α}(y−k) dy.
    let scale = dt.powf(1.0 - al);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    left.push(scale * (1.0 / (1.0 - al) - 1.0 / (2.0 - al)));
    right.push(scale / (2.0 - al));
    for k in 1..n {
        let (mut wl, mut wr) = (0.0, 0.0);
        for &(x, w) in &GAUSS_LEGENDRE_8 {
            let p = (k as f64 + x).powf(-al);
            wl += w * p * (1.0 - x);
            wr += w * p * x;
        }
        left.push(scale * wl);
        right.push(scale * wr);
    }
    Ok(Pairing {
        q,
        g: gv,
        left,
        right,
    })
}

/// `∫_0^T (D^α_{0+} f)(x) (D^{1−α}_{T−} g_{T−})(x) dx`.
pub fn gls_integral(f: &GridFunction, g: &GridFunction, alpha: FractionalOrder) -> Result<f64> {
    let p = pairing(f, g, alpha)?;
    let mut total = 0.0;
    for k in 0..p.left.len() {
        total += p.q[k] * p.g[k] * p.left[k] + p.q[k + 1] * p.g[k + 1] * p.right[k];
    }
    Ok(total)
}

/// `sup |D^{1−α}_{T−} g_{T−}| · ∫_0^T |D^α_{0+} f|`, an upper bound for
/// `|gls_integral(f, g, α)|` that also holds exactly for the discrete values.
pub fn gls_bound(f: &GridFunction, g: &GridFunction, alpha: FractionalOrder) -> Result<f64> {
    let p = pairing(f, g, alpha)?;
    let sup = p.g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut mass = 0.0;
    for k in 0..p.left.len() {
        mass += p.q[k].abs() * p.left[k] + p.q[k + 1].abs() * p.right[k];
    }
    Ok(sup * mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(a: f64) -> FractionalOrder {
        FractionalOrder::new(a).unwrap()
    }

    #[test]
    fn order_validation() {
        assert!(FractionalOrder::new(0.0).is_err());
        assert!(FractionalOrder::new(1.0).is_err());
        let h = HurstIndex::new(0.7).unwrap();
        assert!(FractionalOrder::for_fbm(0.2, h).is_err());
        assert!(FractionalOrder::for_fbm(0.5, h).is_ok());
    }

    #[test]
    fn forward_derivative_of_constant_and_zero() {
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let c = GridFunction::constant(grid, 3.0);
        let d = frac_deriv_forward(&c, order(0.4), 0.0).unwrap();
        assert!(d.is_boundary(0));
        for k in 1..=64 {
            let s = grid.time(k);
            let want = 3.0 * s.powf(-0.4) / gamma(0.6);
            assert!((d.get(k).unwrap() - want).abs() < 1e-12 * want.abs());
        }
        let z = frac_deriv_forward(&GridFunction::constant(grid, 0.0), order(0.4), 0.0).unwrap();
        assert!(z.values()[1..].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn forward_derivative_of_identity() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let f = GridFunction::from_fn(grid, |x| x).unwrap();
        let d = frac_deriv_forward(&f, order(0.3), 0.0).unwrap();
        assert!((d.get(100).unwrap() - 1.100_547_405_523_665_5).abs() < 1e-12);
    }

    #[test]
    fn forward_derivative_respects_left_endpoint() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let f = GridFunction::from_fn(grid, |x| x).unwrap();
        let d = frac_deriv_forward(&f, order(0.5), 0.3).unwrap();
        assert!((0..=3).all(|k| d.is_boundary(k)));
        // Shifted identity: f(s) = (s − a) + a.
        let want = 0.3 * 0.7f64.powf(-0.5) / gamma(0.5) + 0.7f64.powf(0.5) / gamma(1.5);
        assert!((d.get(10).unwrap() - want).abs() < 1e-12);
        assert!(frac_deriv_forward(&f, order(0.5), 0.35).is_err());
    }

    #[test]
    fn backward_derivative_of_identity() {
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let g = GridFunction::from_fn(grid, |x| x).unwrap();
        let d = frac_deriv_backward(&g, order(0.5), 1.0).unwrap();
        assert!(d.is_boundary(200));
        let want = 0.5f64.sqrt() / gamma(1.5);
        assert!((d.get(100).unwrap() - want).abs() < 1e-12);
        let c = frac_deriv_backward(&GridFunction::constant(grid, 2.0), order(0.5), 1.0).unwrap();
        assert!(c.values()[..200].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn gls_reproduces_stieltjes_integrals() {
        let grid = TimeGrid::new(1.0, 4096).unwrap();
        let one = GridFunction::constant(grid, 1.0);
        let x = GridFunction::from_fn(grid, |t| t).unwrap();
        let x2 = GridFunction::from_fn(grid, |t| t * t).unwrap();
        for a in [0.2, 0.5, 0.8] {
            let v = gls_integral(&one, &x2, order(a)).unwrap();
            assert!((v - 1.0).abs() < 1e-3, "alpha {a}: {v}");
            let v = gls_integral(&x, &x2, order(a)).unwrap();
            assert!((v - 2.0 / 3.0).abs() < 1e-3 * 2.0 / 3.0, "alpha {a}: {v}");
        }
        let zero = GridFunction::constant(grid, 0.0);
        assert_eq!(gls_integral(&zero, &x2, order(0.5)).unwrap(), 0.0);
        assert_eq!(gls_bound(&zero, &x2, order(0.5)).unwrap(), 0.0);
    }

    #[test]
    fn gls_bound_dominates() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let x = GridFunction::from_fn(grid, |t| t).unwrap();
        let x2 = GridFunction::from_fn(grid, |t| t * t).unwrap();
        let bound = gls_bound(&x, &x2, order(0.4)).unwrap();
        assert!(bound >= 2.0 / 3.0);
        assert!(bound >= gls_integral(&x, &x2, order(0.4)).unwrap().abs());
    }

    #[test]
    fn rejects_mismatched_grids() {
        let f = GridFunction::constant(TimeGrid::new(1.0, 10).unwrap(), 1.0);
        let g = GridFunction::constant(TimeGrid::new(1.0, 12).unwrap(), 1.0);
        assert!(matches!(gls_integral(&f, &g, order(0.5)), Err(Error::GridMismatch(_))));
    }
}
