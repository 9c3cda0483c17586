//! Uniform time grids and the values carried on them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition `t_k = k T / n` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be finite and positive, got {horizon}"
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidGrid(format!(
                "at least 2 steps are required, got {steps}"
            )));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid on `[0, T]` whose step is as close as possible to `dt`.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round().max(2.0) as usize;
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `n + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * (k as f64 / self.steps as f64)
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }

    /// Grid with every `factor`-th node kept.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.steps
            )));
        }
        Self::new(self.horizon, self.steps / factor)
    }

    /// Index of the cell `[t_k, t_{k+1})` containing `t`, clamped to the grid.
    pub fn cell_of(&self, t: f64) -> usize {
        let k = (t / self.dt()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps - 1)
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: grid (T = {}, n = {}) vs (T = {}, n = {})",
                self.horizon, self.steps, other.horizon, other.steps
            )))
        }
    }
}

/// Where a path came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathMeta {
    pub seed: Option<u64>,
    pub index: Option<u64>,
    pub generator: String,
}

impl PathMeta {
    pub fn tagged(generator: impl Into<String>) -> Self {
        Self {
            seed: None,
            index: None,
            generator: generator.into(),
        }
    }
}

/// Realization of a process on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
    pub meta: PathMeta,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, meta: PathMeta) -> Result<Self> {
        check_values(&grid, &values)?;
        Ok(Self { grid, values, meta })
    }

    /// Identically zero path, the "no noise" driver.
    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            meta: PathMeta::tagged("zero"),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.grid.steps]
    }

    /// `X_{k+1} - X_k` for every cell.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Piecewise-linear interpolation at an arbitrary time in `[0, T]`.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.values, t)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Restriction to every `factor`-th node.
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let values = self.values.iter().step_by(factor).copied().collect();
        Ok(Self {
            grid,
            values,
            meta: self.meta.clone(),
        })
    }

    /// Restriction to the prefix `[0, t_m]`.
    pub fn truncate(&self, steps: usize) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.time(steps), steps)?;
        Ok(Self {
            grid,
            values: self.values[..=steps].to_vec(),
            meta: self.meta.clone(),
        })
    }

    pub fn as_function(&self) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.grid, &self.values, out)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let (grid, values) = read_csv(input)?;
        Self::new(grid, values, PathMeta::tagged("csv"))
    }
}

/// Real-valued function sampled at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.values, t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.grid, &self.values, out)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let (grid, values) = read_csv(input)?;
        Self::new(grid, values)
    }
}

impl From<SamplePath> for GridFunction {
    fn from(path: SamplePath) -> Self {
        Self {
            grid: path.grid,
            values: path.values,
        }
    }
}

/// Values that are undefined at one or more nodes (fractional derivatives at
/// the end of their integration interval, `J'` at `t = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGridFunction {
    grid: TimeGrid,
    values: Vec<Option<f64>>,
}

impl PartialGridFunction {
    pub(crate) fn new(grid: TimeGrid, values: Vec<Option<f64>>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.values[k]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.values[k].is_none()
    }

    /// Boundary nodes are written as `NaN`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let raw: Vec<f64> = self.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        write_csv(&self.grid, &raw, out)
    }
}

fn check_values(grid: &TimeGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} values for a grid with {} nodes",
            values.len(),
            grid.len()
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite value {} at node {k}",
            values[k]
        )));
    }
    Ok(())
}

fn interpolate(grid: &TimeGrid, values: &[f64], t: f64) -> f64 {
    let t = t.clamp(0.0, grid.horizon());
    let k = grid.cell_of(t);
    let lambda = (t - grid.time(k)) / grid.dt();
    values[k] + lambda * (values[k + 1] - values[k])
}

#[derive(Serialize, Deserialize)]
struct Row {
    t: f64,
    value: f64,
}

fn write_csv<W: Write>(grid: &TimeGrid, values: &[f64], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for (t, &value) in grid.times().zip(values) {
        writer.serialize(Row { t, value })?;
    }
    writer.flush()?;
    Ok(())
}

fn read_csv<R: Read>(input: R) -> Result<(TimeGrid, Vec<f64>)> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
        return Err(Error::Config(format!(
            "expected CSV header `t,value`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        times.push(row.t);
        values.push(row.value);
    }
    if times.len() < 3 {
        return Err(Error::InvalidGrid(format!(
            "need at least 3 rows, found {}",
            times.len()
        )));
    }
    let steps = times.len() - 1;
    let grid = TimeGrid::new(times[steps], steps)?;
    let tol = 1e-9 * grid.horizon();
    if times.iter().enumerate().any(|(k, &t)| (t - grid.time(k)).abs() > tol) {
        return Err(Error::InvalidGrid(
            "time column is not a uniform grid starting at 0".into(),
        ));
    }
    Ok((grid, values))
}
