use fdrift_core::estimators::{estimate_mixed, estimate_mle, estimate_ratio, ChiMethod, Observation};
use fdrift_core::frac::{frac_deriv_backward, frac_deriv_forward, gls_integral};
use fdrift_core::gauss::{fbm_covariance, generate_fbm, PairGenerator};
use fdrift_core::growth::{frac_deriv_process, lemma_gaus1_quantity, TwoTimePoint};
use fdrift_core::molchan::molchan_transform;
use fdrift_core::sde::solve_euler;
use fdrift_core::stats::{quantile, Summary};
use fdrift_core::{
    FractionalOrder, GridFunction, HurstIndex, ModelConfig, ModelKind, SamplePath, SeedPolicy, TimeFunction, TimeGrid,
};
use proptest::prelude::*;

fn hurst() -> impl Strategy<Value = f64> {
    0.05f64..0.95
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-12 * scale.max(1.0)
}

/// `c0 + c1 t + c2 sin(ω t)` on the grid.
fn smooth(grid: TimeGrid, c: [f64; 4]) -> GridFunction {
    GridFunction::from_fn(grid, |t| c[0] + c[1] * t + c[2] * (c[3] * t).sin()).unwrap()
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, 0.1f64..6.0]
}

fn combine(lam: f64, f: &GridFunction, mu: f64, g: &GridFunction) -> GridFunction {
    let v = f.values().iter().zip(g.values()).map(|(a, b)| lam * a + mu * b).collect();
    GridFunction::new(*f.grid(), v).unwrap()
}

fn max_abs(v: &[Option<f64>]) -> f64 {
    v.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric_with_power_diagonal(s in 0.0f64..50.0, t in 0.0f64..50.0, h in hurst()) {
        let hi = HurstIndex::new(h).unwrap();
        prop_assert_eq!(fbm_covariance(s, t, hi).unwrap(), fbm_covariance(t, s, hi).unwrap());
        let d = fbm_covariance(t, t, hi).unwrap();
        prop_assert!(close(d, t.powf(2.0 * h), d));
    }

    #[test]
    fn fractional_derivatives_are_linear(
        cf in coeffs(), cg in coeffs(), lam in -5.0f64..5.0, mu in -5.0f64..5.0, alpha in 0.05f64..0.95,
    ) {
        let grid = TimeGrid::new(2.0, 128).unwrap();
        let (f, g) = (smooth(grid, cf), smooth(grid, cg));
        let a = FractionalOrder::new(alpha).unwrap();
        let combo = combine(lam, &f, mu, &g);
        for forward in [true, false] {
            let d = |x: &GridFunction| if forward {
                frac_deriv_forward(x, a, 0.0).unwrap()
            } else {
                frac_deriv_backward(x, a, 2.0).unwrap()
            };
            let (df, dg, dc) = (d(&f), d(&g), d(&combo));
            let scale = lam.abs() * max_abs(df.values()) + mu.abs() * max_abs(dg.values());
            for k in 0..grid.len() {
                match (df.get(k), dg.get(k), dc.get(k)) {
                    (Some(x), Some(y), Some(z)) => prop_assert!(close(z, lam * x + mu * y, scale), "k {}", k),
                    (None, None, None) => {}
                    other => prop_assert!(false, "boundary mismatch at {}: {:?}", k, other),
                }
            }
        }
    }

    #[test]
    fn molchan_transform_is_linear(cf in coeffs(), cg in coeffs(), lam in -5.0f64..5.0, h in 0.5f64..0.95) {
        let grid = TimeGrid::new(3.0, 200).unwrap();
        let hi = HurstIndex::new(h).unwrap();
        let (f, g) = (smooth(grid, cf), smooth(grid, cg));
        let (jf, jg) = (molchan_transform(&f, hi).unwrap(), molchan_transform(&g, hi).unwrap());
        let jc = molchan_transform(&combine(lam, &f, 1.0, &g), hi).unwrap();
        let scale = jf.values().iter().chain(jg.values()).fold(0.0f64, |m, x| m.max(x.abs())) * (1.0 + lam.abs());
        for k in 0..grid.len() {
            prop_assert!(close(jc.values()[k], lam * jf.values()[k] + jg.values()[k], scale));
        }
    }

    #[test]
    fn gls_integral_is_bilinear(cf in coeffs(), cg in coeffs(), ch in coeffs(), lam in -4.0f64..4.0, alpha in 0.3f64..0.9) {
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let a = FractionalOrder::new(alpha).unwrap();
        let (f, g, k) = (smooth(grid, cf), smooth(grid, cg), smooth(grid, ch));
        let i = |x: &GridFunction, y: &GridFunction| gls_integral(x, y, a).unwrap();
        let (fk, gk) = (i(&f, &k), i(&g, &k));
        let scale = (fk.abs() + gk.abs()) * (1.0 + lam.abs()) * 100.0;
        prop_assert!(close(i(&combine(lam, &f, 1.0, &g), &k), lam * fk + gk, scale));
        let (kf, kg) = (i(&k, &f), i(&k, &g));
        let scale = (kf.abs() + kg.abs()) * (1.0 + lam.abs()) * 100.0;
        prop_assert!(close(i(&k, &combine(lam, &f, 1.0, &g)), lam * kf + kg, scale));
    }

    #[test]
    fn frac_process_scales_with_the_path(seed in any::<u64>(), k in -6i32..6, lam in -10.0f64..10.0, t2 in 0.0f64..3.0, gap in 0.01f64..0.9) {
        let grid = TimeGrid::new(4.0, 256).unwrap();
        let h = HurstIndex::new(0.7).unwrap();
        let path = generate_fbm(grid, h, SeedPolicy::new(seed), 0).unwrap();
        let a = FractionalOrder::new(0.4).unwrap();
        let pt = TwoTimePoint { t1: t2 + gap, t2 };
        let x = frac_deriv_process(&path, pt, a).unwrap();
        // powers of two scale exactly
        let p = 2f64.powi(k);
        prop_assert_eq!(frac_deriv_process(&path.scaled(p), pt, a).unwrap(), p * x);
        let y = frac_deriv_process(&path.scaled(lam), pt, a).unwrap();
        prop_assert!(close(y, lam * x, x.abs() * lam.abs()));
    }

    #[test]
    fn gaus1_quantity_vanishes_on_the_diagonal_and_is_nonnegative(z in 1e-3f64..1e3, w in 1e-3f64..1e3, h in 0.3f64..0.95, frac in 0.01f64..0.99) {
        let hi = HurstIndex::new(h).unwrap();
        // 1 − H < α < 1
        let alpha = FractionalOrder::new(1.0 - h + frac * h).unwrap();
        let g = 2.0 * (h + alpha.value() - 1.0);
        let on = lemma_gaus1_quantity(z, z, hi, alpha).unwrap();
        prop_assert!(on.abs() <= 1e-12 * z.powf(g).max(1.0));
        let off = lemma_gaus1_quantity(z, w, hi, alpha).unwrap();
        prop_assert!(off >= -1e-10 * (z.powf(g) + w.powf(g)));
    }

    #[test]
    fn ratio_is_invariant_to_common_scaling(seed in any::<u64>(), lam in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0]) {
        let grid = TimeGrid::new(5.0, 250).unwrap();
        let h = HurstIndex::new(0.7).unwrap();
        let model = |s: f64| ModelConfig {
            kind: ModelKind::Linear { a: TimeFunction::constant(1.5 * s), b: TimeFunction::constant(0.5 * s) },
            theta: 0.4,
            x0: 1.0,
            hurst: h,
        };
        let (w, bh) = PairGenerator::new(grid, h).unwrap().sample(SeedPolicy::new(seed), 0);
        let estimate = |s: f64| {
            let inst = model(s).instance().unwrap();
            let x = solve_euler(&inst, grid, &w, &bh).unwrap();
            estimate_ratio(&Observation::path(&x), &inst.coeffs).unwrap().estimate
        };
        let (e1, e2) = (estimate(1.0), estimate(lam));
        prop_assert!((e1 - e2).abs() <= 1e-10 * e1.abs().max(1.0), "{} vs {}", e1, e2);
    }

    #[test]
    fn zero_noise_recovers_theta(theta in -2.0f64..2.0, a in 0.2f64..3.0, b in 0.2f64..3.0) {
        let grid = TimeGrid::new(4.0, 200).unwrap();
        let zero = SamplePath::zeros(grid);
        let linear = ModelConfig {
            kind: ModelKind::Linear { a: TimeFunction::constant(a), b: TimeFunction::constant(b) },
            theta,
            x0: 1.0,
            hurst: HurstIndex::new(0.7).unwrap(),
        };
        let inst = linear.instance().unwrap();
        let x = solve_euler(&inst, grid, &zero, &zero).unwrap();
        let obs = Observation::path(&x);
        let tol = 1e-9 * theta.abs().max(1.0);
        prop_assert!((estimate_ratio(&obs, &inst.coeffs).unwrap().estimate - theta).abs() < tol);
        prop_assert!((estimate_mle(&obs, &inst.coeffs, linear.hurst, ChiMethod::Closed).unwrap().estimate - theta).abs() < tol);
        let mixed = ModelConfig {
            kind: ModelKind::MixedLinear { a: TimeFunction::constant(a), b: TimeFunction::constant(b), c: TimeFunction::constant(1.0) },
            ..linear
        };
        let inst = mixed.instance().unwrap();
        let x = solve_euler(&inst, grid, &zero, &zero).unwrap();
        prop_assert!((estimate_mixed(&Observation::path(&x), &inst.coeffs).unwrap().estimate - theta).abs() < tol);
    }

    #[test]
    fn euler_is_deterministic(seed in any::<u64>(), index in 0u64..1000) {
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let cfg = ModelConfig {
            kind: ModelKind::preset("mixed_linear").unwrap(),
            theta: 0.3,
            x0: 1.0,
            hurst: HurstIndex::new(0.7).unwrap(),
        };
        let inst = cfg.instance().unwrap();
        let gen = PairGenerator::new(grid, cfg.hurst).unwrap();
        let (w1, b1) = gen.sample(SeedPolicy::new(seed), index);
        let (w2, b2) = gen.sample(SeedPolicy::new(seed), index);
        let x1 = solve_euler(&inst, grid, &w1, &b1).unwrap();
        let x2 = solve_euler(&inst, grid, &w2, &b2).unwrap();
        prop_assert_eq!(x1.values(), x2.values());
    }

    #[test]
    fn summary_quantiles_are_ordered(v in prop::collection::vec(-1e6f64..1e6, 2..200), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let s = Summary::of(&v);
        prop_assert!(s.quantiles.windows(2).all(|w| w[0] <= w[1]));
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.quantiles[0] >= min && s.quantiles[4] <= max);
        prop_assert!(s.mean >= min - 1e-9 * max.abs() && s.mean <= max + 1e-9 * max.abs());
    }
}
