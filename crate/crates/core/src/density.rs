//! Monte Carlo laws of `X_t`: ensembles, kernel density estimates, Gaussian
//! goodness of fit, small-ball probes and the exponential integrability of
//! the Hölder seminorm.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::norris::theta_star;
use crate::paths::PathError;
use crate::sde::{Experiment, SdeError};
use crate::stats;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("radii must be positive and strictly decreasing")]
    RadiiOrder,
    #[error("time {0} is not a grid point")]
    OffGrid(f64),
    #[error("theta must lie in (0, 1/2), got {0}")]
    InvalidTheta(f64),
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("path {path}: {source}")]
    InPath {
        path: u64,
        #[source]
        source: SdeError,
    },
    #[error(transparent)]
    Path(#[from] PathError),
}

/// `N` samples of `X_t`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub t: f64,
    pub dim: usize,
    pub samples: Vec<f64>,
    pub seed: u64,
}

impl Ensemble {
    pub fn from_rows(t: f64, dim: usize, samples: Vec<f64>, seed: u64) -> Result<Ensemble, DensityError> {
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(DensityError::Dimension(format!("{} values do not form rows of {dim}", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(DensityError::Dimension("ensemble rows must be finite".into()));
        }
        Ok(Ensemble { t, dim, samples, seed })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.samples[i * self.dim + c]).collect()
    }

    /// CSV `path,x1,..,xd`.
    pub fn write_csv<W: Write>(&self, out: W, metadata: &[(&str, String)]) -> Result<(), PathError> {
        let mut out = out;
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `X_t` for paths `0..n` of the experiment.
pub fn run_ensemble(exp: &Experiment, t: f64, n: usize) -> Result<Ensemble, DensityError> {
    let k = exp.grid().index_of(t).ok_or(DensityError::OffGrid(t))?;
    let rows = (0..n as u64)
        .into_par_iter()
        .map(|p| {
            exp.solve(p)
                .map(|(_, x)| x.at(k).to_vec())
                .map_err(|source| DensityError::InPath { path: p, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ensemble::from_rows(exp.grid().time(k), exp.sys.dim(), rows.concat(), exp.source.seed())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule `0.9 min(sd, IQR/1.34) N^{-1/5}`.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct KdeTable {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

pub const KDE_POINTS: usize = 512;

pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let sd = stats::variance(xs).sqrt();
    let iqr = stats::quantile(xs, 0.75) - stats::quantile(xs, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

/// Gaussian kernel estimate on 512 points spanning the sample range ± 3 bandwidths.
pub fn kde_samples(xs: &[f64], bandwidth: Bandwidth) -> Result<KdeTable, DensityError> {
    if xs.len() < 100 {
        return Err(DensityError::TooFewSamples { needed: 100, got: xs.len() });
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(DensityError::ZeroVariance);
    }
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(xs),
        Bandwidth::Value(v) if v > 0.0 && v.is_finite() => v,
        Bandwidth::Value(v) => return Err(DensityError::Bandwidth(v)),
    };
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let x: Vec<f64> = (0..KDE_POINTS).map(|i| a + (b - a) * i as f64 / (KDE_POINTS - 1) as f64).collect();
    let norm = 1.0 / (xs.len() as f64 * h);
    let density = x
        .par_iter()
        .map(|&g| xs.iter().map(|s| stats::normal_pdf((g - s) / h)).sum::<f64>() * norm)
        .collect();
    Ok(KdeTable { bandwidth: h, x, density })
}

pub fn kde(e: &Ensemble, component: usize, bandwidth: Bandwidth) -> Result<KdeTable, DensityError> {
    if component >= e.dim {
        return Err(DensityError::Dimension(format!("component {component} of a {}-dimensional ensemble", e.dim)));
    }
    kde_samples(&e.component(component), bandwidth)
}

impl KdeTable {
    /// Trapezoid integral of the estimate.
    pub fn mass(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W, metadata: &[(&str, String)]) -> Result<(), PathError> {
        let mut out = out;
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "# bandwidth={:?}", self.bandwidth)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "density"])?;
        for (x, d) in self.x.iter().zip(&self.density) {
            w.write_record([format!("{x:?}"), format!("{d:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentTest {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianReport {
    pub components: Vec<ComponentTest>,
    pub level: f64,
    /// `level / d`
    pub per_component_level: f64,
    pub pass: bool,
}

pub const GAUSSIAN_LEVEL: f64 = 0.01;

/// Whitens with the Cholesky factor of `cov` and runs a KS test per
/// component against the standard normal, Bonferroni-corrected.
pub fn gaussian_check(e: &Ensemble, mean: &[f64], cov: &DMatrix<f64>) -> Result<GaussianReport, DensityError> {
    let d = e.dim;
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(DensityError::Dimension(format!("target has mean {} and cov {}x{}, ensemble dim {d}", mean.len(), cov.nrows(), cov.ncols())));
    }
    if e.len() < 100 {
        return Err(DensityError::TooFewSamples { needed: 100, got: e.len() });
    }
    let chol = cov.clone().cholesky().ok_or(DensityError::SingularCovariance)?;
    let l = chol.l();
    if l.diagonal().iter().any(|v| *v <= 1e-300) {
        return Err(DensityError::SingularCovariance);
    }
    let mut white = vec![Vec::with_capacity(e.len()); d];
    for i in 0..e.len() {
        let centred = DVector::from_iterator(d, e.row(i).iter().zip(mean).map(|(x, m)| x - m));
        let z = l.solve_lower_triangular(&centred).ok_or(DensityError::SingularCovariance)?;
        for (c, v) in z.iter().enumerate() {
            white[c].push(*v);
        }
    }
    let per = GAUSSIAN_LEVEL / d as f64;
    let components: Vec<ComponentTest> = white
        .iter()
        .map(|xs| {
            let (statistic, p_value) = stats::ks_one_sample(xs, stats::normal_cdf);
            ComponentTest { statistic, p_value }
        })
        .collect();
    let pass = components.iter().all(|c| c.p_value >= per);
    Ok(GaussianReport { components, level: GAUSSIAN_LEVEL, per_component_level: per, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallBallRow {
    pub radius: f64,
    pub frequency: f64,
    /// `frequency / r^d`
    pub ratio: f64,
}

pub fn small_ball_probe(e: &Ensemble, center: &[f64], radii: &[f64]) -> Result<Vec<SmallBallRow>, DensityError> {
    if center.len() != e.dim {
        return Err(DensityError::Dimension(format!("center has {} coordinates, ensemble dim {}", center.len(), e.dim)));
    }
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(DensityError::RadiiOrder);
    }
    let dist: Vec<f64> = (0..e.len())
        .map(|i| e.row(i).iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>().sqrt())
        .collect();
    let n = e.len() as f64;
    Ok(radii
        .iter()
        .map(|&r| {
            let frequency = dist.iter().filter(|v| **v <= r).count() as f64 / n;
            SmallBallRow { radius: r, frequency, ratio: frequency / r.powi(e.dim as i32) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityExponents {
    pub hurst: f64,
    pub theta: f64,
    /// `min(4H / (2(H + θ) + 1), (2H + 1) / (4H))`
    pub q_star: f64,
    /// `(H - 1/2) / (3 - 4H)`
    pub theta_star: f64,
}

impl IntegrabilityExponents {
    pub fn new(hurst: f64, theta: f64) -> Self {
        let q_star = (4.0 * hurst / (2.0 * (hurst + theta) + 1.0)).min((2.0 * hurst + 1.0) / (4.0 * hurst));
        IntegrabilityExponents { hurst, theta, q_star, theta_star: theta_star(hurst) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityCell {
    pub k: f64,
    pub q: f64,
    pub below_q_star: bool,
    /// Mean of `exp(K ‖X‖_θ^q)` over the first `N` paths.
    pub estimate_n: f64,
    /// Same over all `2N` paths.
    pub estimate_2n: f64,
    /// `estimate_2n / estimate_n`
    pub ratio: f64,
    pub overflow: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityTable {
    pub exponents: IntegrabilityExponents,
    pub paths: usize,
    pub cells: Vec<IntegrabilityCell>,
    /// Median Hölder seminorm over all paths.
    pub median_seminorm: f64,
}

/// Hölder seminorms of paths `0..2n`, then doubling-stability of
/// `E exp(K ‖X‖_θ^q)` on the `(K, q)` grid.
pub fn holder_integrability_study(
    exp: &Experiment,
    theta: f64,
    ks: &[f64],
    qs: &[f64],
    n: usize,
) -> Result<IntegrabilityTable, DensityError> {
    if !(theta > 0.0 && theta < 0.5) {
        return Err(DensityError::InvalidTheta(theta));
    }
    if n == 0 {
        return Err(DensityError::TooFewSamples { needed: 1, got: 0 });
    }
    let seminorms = (0..2 * n as u64)
        .into_par_iter()
        .map(|p| {
            exp.solve(p)
                .map(|(_, x)| x.holder_seminorm(theta))
                .map_err(|source| DensityError::InPath { path: p, source })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let exponents = IntegrabilityExponents::new(exp.source.hurst().value(), theta);
    let cells = qs
        .iter()
        .flat_map(|&q| ks.iter().map(move |&k| (k, q)))
        .map(|(k, q)| {
            let vals: Vec<f64> = seminorms.iter().map(|s| (k * s.powf(q)).exp()).collect();
            let overflow = vals.iter().any(|v| !v.is_finite());
            let estimate_n = stats::mean(&vals[..n]);
            let estimate_2n = stats::mean(&vals);
            IntegrabilityCell {
                k,
                q,
                below_q_star: q < exponents.q_star,
                estimate_n,
                estimate_2n,
                ratio: estimate_2n / estimate_n,
                overflow,
            }
        })
        .collect();
    Ok(IntegrabilityTable { exponents, paths: 2 * n, cells, median_seminorm: stats::median(&seminorms) })
}
