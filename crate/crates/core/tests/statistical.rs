use fdrift_core::experiments::{run, ExperimentConfig};
use fdrift_core::gauss::{generate_fbm, PairGenerator};
use fdrift_core::molchan::molchan_martingale;
use fdrift_core::sde::solve_euler;
use fdrift_core::stats::mean;
use fdrift_core::{HurstIndex, ModelConfig, ModelKind, SeedPolicy, TimeFunction, TimeGrid};

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lam = (en + 0.12 + 0.11 / en) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp()
        })
        .sum();
    (d, p.clamp(0.0, 1.0))
}

fn h(v: f64) -> HurstIndex {
    HurstIndex::new(v).unwrap()
}

#[test]
fn ks_reference_values() {
    let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..100).map(|i| i as f64 + 0.5).collect();
    let (d, p) = ks_two_sample(a.clone(), b);
    assert!((d - 0.01).abs() < 1e-12 && p > 0.99);
    let c: Vec<f64> = (0..100).map(|i| i as f64 + 30.0).collect();
    let (d, p) = ks_two_sample(a, c);
    assert!((d - 0.3).abs() < 1e-12 && p < 1e-3, "{d} {p}");
}

#[test]
fn fbm_is_self_similar_in_law() {
    let (hurst, c, samples) = (h(0.7), 4.0, 10_000u64);
    let unit = TimeGrid::new(1.0, 16).unwrap();
    let long = TimeGrid::new(c, 16).unwrap();
    let a: Vec<f64> = (0..samples)
        .map(|i| generate_fbm(unit, hurst, SeedPolicy::new(11), i).unwrap().terminal())
        .collect();
    let b: Vec<f64> = (0..samples)
        .map(|i| generate_fbm(long, hurst, SeedPolicy::new(12), i).unwrap().terminal() / c.powf(0.7))
        .collect();
    let (d, p) = ks_two_sample(a, b);
    assert!(p > 0.01, "KS d = {d}, p = {p}");
}

#[test]
fn euler_terminal_law_matches_closed_form() {
    let cfg = ModelConfig {
        kind: ModelKind::MixedLinear {
            a: TimeFunction::constant(1.0),
            b: TimeFunction::constant(1.0),
            c: TimeFunction::constant(1.0),
        },
        theta: 0.5,
        x0: 1.0,
        hurst: h(0.7),
    };
    let inst = cfg.instance().unwrap();
    let grid = TimeGrid::new(1.0, 1 << 12).unwrap();
    let gen = PairGenerator::new(grid, cfg.hurst).unwrap();
    let (mut euler, mut exact) = (Vec::new(), Vec::new());
    for i in 0..10_000 {
        let (w, bh) = gen.sample(SeedPolicy::new(21), i);
        euler.push(solve_euler(&inst, grid, &w, &bh).unwrap().terminal());
        let (w, bh) = gen.sample(SeedPolicy::new(22), i);
        exact.push(cfg.exact_solution(grid, &w, &bh).unwrap().terminal());
    }
    let (d, p) = ks_two_sample(euler, exact);
    assert!(p > 0.01, "KS d = {d}, p = {p}");
}

#[test]
fn euler_converges_strongly_on_the_linear_model() {
    let hurst = h(0.7);
    let cfg = ModelConfig {
        kind: ModelKind::Linear { a: TimeFunction::constant(1.0), b: TimeFunction::constant(1.0) },
        theta: 0.5,
        x0: 1.0,
        hurst,
    };
    let inst = cfg.instance().unwrap();
    let fine = TimeGrid::new(1.0, 1 << 13).unwrap();
    let gen = PairGenerator::new(fine, hurst).unwrap();
    // a single path sits right at the rate boundary, so average the max error over fixed paths
    let paths = 20;
    let mut err = [0.0; 6];
    for seed in 0..paths {
        let (w, bh) = gen.sample(SeedPolicy::new(seed), 0);
        for (i, level) in (8..=13).enumerate() {
            let factor = 1usize << (13 - level);
            let (w, bh) = (w.restrict(factor).unwrap(), bh.restrict(factor).unwrap());
            let grid = *bh.grid();
            let x = solve_euler(&inst, grid, &w, &bh).unwrap();
            let exact = cfg.exact_solution(grid, &w, &bh).unwrap();
            let e = x.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            err[i] += e / paths as f64;
        }
    }
    let pts: Vec<(f64, f64)> = (8..=13).zip(err).map(|(l, e)| (l as f64 * 2f64.ln(), e.ln())).collect();
    let (mx, my) = (mean(&pts.iter().map(|p| p.0).collect::<Vec<_>>()), mean(&pts.iter().map(|p| p.1).collect::<Vec<_>>()));
    let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / pts.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    let order = -slope;
    assert!(order >= 0.5f64.min(2.0 * 0.7 - 1.0), "observed order {order}, errors {pts:?}");
}

#[test]
fn martingale_increments_are_uncorrelated_with_the_past() {
    let hurst = h(0.7);
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let (mut past, mut incr) = (Vec::new(), Vec::new());
    for i in 0..5000 {
        let m = molchan_martingale(&generate_fbm(grid, hurst, SeedPolicy::new(31), i).unwrap(), hurst).unwrap();
        let mid = m.values()[32];
        past.push(mid);
        incr.push(m.terminal() - mid);
    }
    let (mp, mi) = (mean(&past), mean(&incr));
    let cov = past.iter().zip(&incr).map(|(a, b)| (a - mp) * (b - mi)).sum::<f64>() / past.len() as f64;
    let sd = |v: &[f64], m: f64| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    let corr = cov / (sd(&past, mp) * sd(&incr, mi));
    // under zero correlation the sample correlation has sd about 1/sqrt(n)
    assert!(corr.abs() < 4.0 / (past.len() as f64).sqrt(), "corr {corr}");
}

const CONSISTENCY: &str = r#"
schema_version = 1
name = "small"
kind = "consistency"
estimators = ["MLE", "RATIO"]
horizons = [2.0, 4.0]
replicates = 200
dt = 0.02
seed = 7

[model]
kind = "linear"
theta = 0.5
hurst = 0.7
a = { kind = "constant", value = 1.0 }
b = { kind = "constant", value = 1.0 }
"#;

const SEQUENTIAL: &str = r#"
schema_version = 1
name = "small_seq"
kind = "sequential"
estimators = ["SEQ_MLE"]
levels = [1.0, 4.0]
max_horizon = 5.0
replicates = 100
dt = 0.005
seed = 8

[model]
kind = "linear"
theta = 0.5
hurst = 0.7
a = { kind = "constant", value = 4.0 }
b = { kind = "constant", value = 1.0 }
"#;

#[test]
fn consistency_reports_are_well_formed_and_reproducible() {
    let cfg = ExperimentConfig::from_toml_str(CONSISTENCY).unwrap();
    let r1 = run(&cfg).unwrap();
    let r2 = run(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    let (mut c1, mut c2) = (Vec::new(), Vec::new());
    r1.write_csv(&mut c1).unwrap();
    r2.write_csv(&mut c2).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(r1.rows.len(), 4);
    for row in &r1.rows {
        assert_eq!(row.replicates, cfg.replicates);
        assert!(row.failures <= row.replicates);
        assert!(row.quantiles.windows(2).all(|w| w[0] <= w[1]), "{:?}", row.quantiles);
        let (bias, mse) = (row.bias.unwrap(), row.mse.unwrap());
        assert!(mse >= bias * bias * (1.0 - 1e-12), "mse {mse} bias {bias}");
    }
}

#[test]
fn sequential_stopping_times_are_nested() {
    let cfg = ExperimentConfig::from_toml_str(SEQUENTIAL).unwrap();
    let report = run(&cfg).unwrap();
    let nested = report.checks.iter().find(|c| c.name.starts_with("stopping_nested")).expect("nesting check");
    assert!(nested.passed, "{}", nested.detail);
    let taus: Vec<f64> = report.rows.iter().map(|r| r.stopping_time.as_ref().unwrap().mean).collect();
    assert!(taus.windows(2).all(|w| w[0] < w[1]), "{taus:?}");
}
