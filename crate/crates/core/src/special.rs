//! Special functions and fixed quadrature rules.

pub use statrs::function::beta::{beta, beta_reg};
pub use statrs::function::gamma::{gamma, ln_gamma};

/// 8-point Gauss–Legendre rule on `[0, 1]`: `(node, weight)` in ascending
/// node order. The rule is symmetric: `node[7 - i] = 1 - node[i]`.
pub const GAUSS_LEGENDRE_8: [(f64, f64); 8] = {
    const XI: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329_0,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362_0,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    [
        (0.5 * (1.0 - XI[3]), 0.5 * W[3]),
        (0.5 * (1.0 - XI[2]), 0.5 * W[2]),
        (0.5 * (1.0 - XI[1]), 0.5 * W[1]),
        (0.5 * (1.0 - XI[0]), 0.5 * W[0]),
        (0.5 * (1.0 + XI[0]), 0.5 * W[0]),
        (0.5 * (1.0 + XI[1]), 0.5 * W[1]),
        (0.5 * (1.0 + XI[2]), 0.5 * W[2]),
        (0.5 * (1.0 + XI[3]), 0.5 * W[3]),
    ]
};

/// `∫_lo^hi w^p dw` for `0 <= lo <= hi`, including `p = -1` and negative
/// exponents with `lo > 0`.
pub fn power_moment(lo: f64, hi: f64, p: f64) -> f64 {
    if (p + 1.0).abs() < 1e-15 {
        (hi / lo).ln()
    } else {
        (hi.powf(p + 1.0) - lo.powf(p + 1.0)) / (p + 1.0)
    }
}

/// `∫ f` over `[a, b]` by composite Gauss–Legendre with `panels` panels.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let left = a + p as f64 * h;
        let mut panel = 0.0;
        for &(x, w) in &GAUSS_LEGENDRE_8 {
            panel += w * f(left + x * h);
        }
        total += panel * h;
    }
    total
}
