//! Uniform time grids, vector-valued sample paths and path seminorms.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("path has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value at grid index {index}, component {component}")]
    NonFinite { index: usize, component: usize },
    #[error("paths live on different grids")]
    GridMismatch,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Malformed(String),
}

/// Uniform grid `t_k = k T / n`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<TimeGrid, PathError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(PathError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(PathError::InvalidGrid("at least one step is required".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }

    /// Grid index of time `t`, if `t` lies on the grid (relative tolerance 1e-9).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let k = x.round();
        if k < 0.0 || k > self.steps as f64 || (x - k).abs() > 1e-9 * (1.0 + x.abs()) {
            None
        } else {
            Some(k as usize)
        }
    }

    /// The grid keeping every `factor`-th point.
    pub fn coarsen(&self, factor: usize) -> Result<TimeGrid, PathError> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(PathError::InvalidGrid(format!(
                "cannot coarsen {} steps by factor {factor}",
                self.steps
            )));
        }
        TimeGrid::new(self.horizon, self.steps / factor)
    }
}

/// Values of an `dim`-dimensional process at every grid point, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<SamplePath, PathError> {
        let labels = (1..=dim).map(|i| format!("x{i}")).collect();
        SamplePath::with_labels(grid, values, labels)
    }

    pub fn with_labels(
        grid: TimeGrid,
        values: Vec<f64>,
        labels: Vec<String>,
    ) -> Result<SamplePath, PathError> {
        let dim = labels.len();
        if values.len() != grid.len() * dim {
            return Err(PathError::Shape {
                expected: grid.len() * dim,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(PathError::NonFinite {
                index: pos / dim,
                component: pos % dim,
            });
        }
        Ok(SamplePath { grid, dim, values, labels })
    }

    /// Scalar path from a function of time.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<SamplePath, PathError> {
        SamplePath::new(grid, 1, grid.times().map(f).collect())
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> SamplePath {
        SamplePath::new(grid, dim, vec![0.0; grid.len() * dim]).expect("shape is consistent")
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.at(self.grid.steps())
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.values[k * self.dim + c]).collect()
    }

    /// The `c`-th component as a scalar path.
    pub fn scalar(&self, c: usize) -> SamplePath {
        SamplePath {
            grid: self.grid,
            dim: 1,
            values: self.component(c),
            labels: vec![self.labels[c].clone()],
        }
    }

    /// Increment of component `c` over step `k`.
    pub fn increment(&self, k: usize, c: usize) -> f64 {
        self.values[(k + 1) * self.dim + c] - self.values[k * self.dim + c]
    }

    pub fn scaled(&self, factor: f64) -> SamplePath {
        SamplePath {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn try_add(&self, other: &SamplePath) -> Result<SamplePath, PathError> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(PathError::GridMismatch);
        }
        Ok(SamplePath {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Restriction to every `factor`-th grid point.
    pub fn coarsen(&self, factor: usize) -> Result<SamplePath, PathError> {
        let grid = self.grid.coarsen(factor)?;
        let values = (0..grid.len())
            .flat_map(|k| self.at(k * factor).iter().copied())
            .collect();
        Ok(SamplePath { grid, dim: self.dim, values, labels: self.labels.clone() })
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.at(i)
            .iter()
            .zip(self.at(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `max_k |p(t_k)|` with the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|k| self.at(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Exact discrete θ-Hölder seminorm over all grid pairs.
    pub fn holder_seminorm(&self, theta: f64) -> f64 {
        let n = self.grid.steps();
        let dt = self.grid.dt();
        let inv_scale: Vec<f64> = (0..=n).map(|lag| (lag as f64 * dt).powf(-theta)).collect();
        let row = |s: usize| {
            ((s + 1)..=n)
                .map(|t| self.distance(s, t) * inv_scale[t - s])
                .fold(0.0, f64::max)
        };
        if n > 1024 {
            (0..n).into_par_iter().map(row).reduce(|| 0.0, f64::max)
        } else {
            (0..n).map(row).fold(0.0, f64::max)
        }
    }

    /// Approximate seminorm over pairs with `t - s <= T/8` plus dyadic lags.
    /// Never exceeds [`SamplePath::holder_seminorm`].
    pub fn holder_seminorm_windowed(&self, theta: f64) -> f64 {
        let n = self.grid.steps();
        let dt = self.grid.dt();
        let window = (n / 8).max(1);
        let mut lags: Vec<usize> = (1..=window.min(n)).collect();
        let mut lag = window.next_power_of_two();
        while lag <= n {
            if lag > window {
                lags.push(lag);
            }
            lag *= 2;
        }
        if !lags.contains(&n) {
            lags.push(n);
        }
        lags.par_iter()
            .map(|&lag| {
                let scale = (lag as f64 * dt).powf(theta);
                (0..=(n - lag))
                    .map(|s| self.distance(s, s + lag) / scale)
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Writes `time,<labels...>` CSV, preceded by `# key=value` comment lines.
    pub fn write_csv<W: Write>(&self, out: W, metadata: &[(&str, String)]) -> Result<(), PathError> {
        let mut out = out;
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend(self.labels.iter().cloned());
        writer.write_record(&header)?;
        for (k, t) in self.grid.times().enumerate() {
            let mut record = vec![format!("{t:?}")];
            record.extend(self.at(k).iter().map(|v| format!("{v:?}")));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`SamplePath::write_csv`]; the grid is
    /// reconstructed from the time column and must be uniform.
    pub fn read_csv<R: Read>(input: R) -> Result<SamplePath, PathError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let labels: Vec<String> = reader.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| PathError::Malformed(format!("not a number: `{s}`")))
            };
            times.push(parse(&record[0])?);
            for field in record.iter().skip(1) {
                values.push(parse(field)?);
            }
        }
        if times.len() < 2 || times[0] != 0.0 {
            return Err(PathError::Malformed("time column must start at 0 with at least two rows".into()));
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
        for (k, t) in times.iter().enumerate() {
            if (t - grid.time(k)).abs() > 1e-9 * grid.horizon() {
                return Err(PathError::Malformed(format!("time column is not uniform at row {k}")));
            }
        }
        SamplePath::with_labels(grid, values, labels)
    }
}
