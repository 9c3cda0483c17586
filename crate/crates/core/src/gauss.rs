//! Exact simulation of fractional and standard Brownian motion.
//!
//! Paths are built from their increments. The increment sequence of fBm on a
//! uniform grid with step `Δ` is stationary with autocovariance
//! `Δ^{2H} γ(k)`, `γ(k) = ½(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H})`, and is
//! sampled exactly either by a Cholesky factor of its Toeplitz covariance or by
//! circulant embedding (Davies–Harte).

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PathMeta, SamplePath, TimeGrid};
use crate::seed::{SeedPolicy, Stream};

/// Hurst index of a fractional Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstIndex(f64);

impl HurstIndex {
    /// Any `H` in `(0, 1)`; enough for path generation.
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::HurstOutOfRange(value))
        }
    }

    /// `H` in `[1/2, 1)`, the range where the drift estimators are defined.
    /// `H = 1/2` is kept as the classical diffusion control case.
    pub fn for_estimation(value: f64) -> Result<Self> {
        let h = Self::new(value)?;
        h.require_estimable()?;
        Ok(h)
    }

    pub fn require_estimable(self) -> Result<Self> {
        if self.0 >= 0.5 {
            Ok(self)
        } else {
            Err(Error::HurstNotEstimable(self.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for HurstIndex {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<HurstIndex> for f64 {
    fn from(h: HurstIndex) -> f64 {
        h.0
    }
}

/// `E[B^H_s B^H_t] = ½(t^{2H} + s^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, hurst: HurstIndex) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::Domain(format!(
            "fBm covariance needs nonnegative times, got s = {s}, t = {t}"
        )));
    }
    let two_h = 2.0 * hurst.value();
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(lag: usize, hurst: HurstIndex) -> f64 {
    let two_h = 2.0 * hurst.value();
    let k = lag as f64;
    let below = if lag == 0 { 1.0 } else { (k - 1.0).powf(two_h) };
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + below)
}

/// Exact generation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbmMethod {
    /// Cholesky up to [`CHOLESKY_MAX_STEPS`] steps, circulant embedding above.
    #[default]
    Auto,
    Cholesky,
    Circulant,
}

/// Largest grid for which [`FbmMethod::Auto`] uses the Cholesky factor.
pub const CHOLESKY_MAX_STEPS: usize = 256;

enum Sampler {
    Cholesky {
        /// Row-major lower triangle, row `i` holds `i + 1` entries.
        lower: Vec<f64>,
    },
    Circulant {
        /// `sqrt(λ_k / N)` of the embedding circulant.
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
}

/// Reusable exact fBm sampler for one `(grid, H)` pair.
///
/// Construction does the expensive factorization once; [`FbmGenerator::sample`]
/// is pure and may be called concurrently.
pub struct FbmGenerator {
    grid: TimeGrid,
    hurst: HurstIndex,
    method: FbmMethod,
    sampler: Sampler,
}

impl std::fmt::Debug for FbmGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmGenerator")
            .field("grid", &self.grid)
            .field("hurst", &self.hurst)
            .field("method", &self.method)
            .finish()
    }
}

impl FbmGenerator {
    pub fn new(grid: TimeGrid, hurst: HurstIndex, method: FbmMethod) -> Result<Self> {
        let n = grid.steps();
        let method = match method {
            FbmMethod::Auto if n <= CHOLESKY_MAX_STEPS => FbmMethod::Cholesky,
            FbmMethod::Auto => FbmMethod::Circulant,
            m => m,
        };
        let sampler = match method {
            FbmMethod::Cholesky => cholesky_sampler(n, hurst)?,
            _ => circulant_sampler(n, hurst)?,
        };
        Ok(Self {
            grid,
            hurst,
            method,
            sampler,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstIndex {
        self.hurst
    }

    /// Method actually in use (never `Auto`).
    pub fn method(&self) -> FbmMethod {
        self.method
    }

    /// Path for replicate `index` under `seed`.
    pub fn sample(&self, seed: SeedPolicy, index: u64) -> SamplePath {
        let mut rng = seed.rng(index, Stream::Fractional);
        let increments = self.sample_increments(&mut rng);
        let values = cumulate(&increments);
        let tag = match self.method {
            FbmMethod::Cholesky => "fbm-cholesky",
            _ => "fbm-circulant",
        };
        SamplePath::new(
            self.grid,
            values,
            PathMeta {
                seed: Some(seed.master),
                index: Some(index),
                generator: format!("{tag} H={}", self.hurst.value()),
            },
        )
        .expect("fBm sampler produced a malformed path")
    }

    /// Increments `B_{t_{k+1}} − B_{t_k}` drawn from `rng`.
    pub fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.grid.steps();
        let step_scale = self.grid.dt().powf(self.hurst.value());
        match &self.sampler {
            Sampler::Cholesky { lower } => {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let mut out = Vec::with_capacity(n);
                let mut offset = 0;
                for i in 0..n {
                    let row = &lower[offset..offset + i + 1];
                    let dot: f64 = row.iter().zip(&z).map(|(l, z)| l * z).sum();
                    out.push(step_scale * dot);
                    offset += i + 1;
                }
                out
            }
            Sampler::Circulant { scale, fft } => {
                let mut buf: Vec<Complex64> = scale
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..n].iter().map(|c| step_scale * c.re).collect()
            }
        }
    }
}

fn cholesky_sampler(n: usize, hurst: HurstIndex) -> Result<Sampler> {
    let gamma: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, hurst)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| gamma[i.abs_diff(j)]);
    let chol = cov.cholesky().ok_or_else(|| Error::Factorization {
        n,
        hurst: hurst.value(),
        reason: "increment covariance is not numerically positive definite".into(),
    })?;
    let l = chol.l();
    let mut lower = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            lower.push(l[(i, j)]);
        }
    }
    Ok(Sampler::Cholesky { lower })
}

fn circulant_sampler(n: usize, hurst: HurstIndex) -> Result<Sampler> {
    let m = n.next_power_of_two();
    let size = 2 * m;
    let mut row: Vec<Complex64> = (0..size)
        .map(|j| {
            let lag = if j <= m { j } else { size - j };
            Complex64::new(fgn_autocovariance(lag, hurst), 0.0)
        })
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(size);
    fft.process(&mut row);
    let max = row.iter().map(|c| c.re).fold(0.0_f64, f64::max);
    let min = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    if min < -1e-10 * max {
        return Err(Error::Factorization {
            n,
            hurst: hurst.value(),
            reason: format!("circulant embedding has a negative eigenvalue {min:e}"),
        });
    }
    let scale = row
        .iter()
        .map(|c| (c.re.max(0.0) / size as f64).sqrt())
        .collect();
    Ok(Sampler::Circulant { scale, fft })
}

fn cumulate(increments: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    values.push(acc);
    for dx in increments {
        acc += dx;
        values.push(acc);
    }
    values
}

/// fBm path on `grid` for replicate `index`.
pub fn generate_fbm(grid: TimeGrid, hurst: HurstIndex, seed: SeedPolicy, index: u64) -> Result<SamplePath> {
    Ok(FbmGenerator::new(grid, hurst, FbmMethod::Auto)?.sample(seed, index))
}

/// Standard Brownian increments, i.i.d. `N(0, Δ)`.
pub fn bm_increments<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
    let sd = grid.dt().sqrt();
    (0..grid.steps())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Standard Brownian path on `grid` for replicate `index`.
pub fn generate_bm(grid: TimeGrid, seed: SeedPolicy, index: u64) -> SamplePath {
    let mut rng = seed.rng(index, Stream::Brownian);
    let values = cumulate(&bm_increments(&grid, &mut rng));
    SamplePath::new(
        grid,
        values,
        PathMeta {
            seed: Some(seed.master),
            index: Some(index),
            generator: "bm".into(),
        },
    )
    .expect("Brownian sampler produced a malformed path")
}

/// Independent `(W, B^H)` pair for replicate `index`.
///
/// The components use separate random streams of the same substream seed, so
/// `B^H` equals `generate_fbm` for the same `(seed, index)`.
pub fn generate_pair(
    grid: TimeGrid,
    hurst: HurstIndex,
    seed: SeedPolicy,
    index: u64,
) -> Result<(SamplePath, SamplePath)> {
    let bh = generate_fbm(grid, hurst, seed, index)?;
    Ok((generate_bm(grid, seed, index), bh))
}

/// Generates `(W, B^H)` pairs with one shared factorization.
#[derive(Debug)]
pub struct PairGenerator {
    fbm: FbmGenerator,
}

impl PairGenerator {
    pub fn new(grid: TimeGrid, hurst: HurstIndex) -> Result<Self> {
        Ok(Self {
            fbm: FbmGenerator::new(grid, hurst, FbmMethod::Auto)?,
        })
    }

    pub fn fbm(&self) -> &FbmGenerator {
        &self.fbm
    }

    pub fn sample(&self, seed: SeedPolicy, index: u64) -> (SamplePath, SamplePath) {
        let grid = *self.fbm.grid();
        (generate_bm(grid, seed, index), self.fbm.sample(seed, index))
    }
}
