//! First variation `J_t = ∂X_t/∂X_0` along a trajectory and its inverse `Z_t`.
//!
//! ```text
//! dJ = A J dt + Σ_j B_j J dW^j + Σ_q C_q J dB^q
//! dZ = Z (-A + Σ_j B_j B_j) dt - Σ_j Z B_j dW^j - Σ_q Z C_q dB^q
//! ```
//!
//! where `A, B_j, C_q` are the Jacobians of the coefficient fields at
//! `(t, X_t)`. The `Σ B_j B_j` term is the Itô correction forced by
//! `d(ZJ) = 0`; the Young part follows the classical chain rule.

use std::io::Write;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::exprlang::ExprError;
use crate::fields::CoefficientSystem;
use crate::noise::NoiseBundle;
use crate::paths::{PathError, SamplePath, TimeGrid};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("Jacobian evaluation failed at step {step}: {source}")]
    Eval {
        step: usize,
        #[source]
        source: ExprError,
    },
    #[error("matrix flow overflow at step {0}")]
    Overflow(usize),
    #[error("transition needs s <= t, got s = {s}, t = {t}")]
    IndexOrder { s: usize, t: usize },
    #[error("grid index {index} out of range (last index {last})")]
    IndexRange { index: usize, last: usize },
    #[error("trajectory, noise and system do not match: {0}")]
    Shape(String),
    #[error("J is singular at step {0}")]
    Singular(usize),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// A `d x d` matrix at every grid point, stored flat and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl MatrixPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major entries of the matrix at grid index `k`.
    pub fn at(&self, k: usize) -> &[f64] {
        let s = self.dim * self.dim;
        &self.data[k * s..(k + 1) * s]
    }

    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, self.at(k))
    }

    pub fn determinants(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.matrix(k).determinant()).collect()
    }

    /// Pointwise numerical inverse.
    pub fn inverse(&self) -> Result<MatrixPath, FlowError> {
        let d = self.dim;
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..self.len() {
            let inv = self.matrix(k).try_inverse().ok_or(FlowError::Singular(k))?;
            data.extend(inv.transpose().iter().copied());
            debug_assert_eq!(data.len(), (k + 1) * d * d);
        }
        Ok(MatrixPath { grid: self.grid, dim: d, data })
    }
}

// out = a * b for row-major d x d blocks
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|r| a[i * d + r] * b[r * d + j]).sum();
        }
    }
}

// out = m * v
pub(crate) fn matvec(m: &[f64], v: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        out[i] = (0..d).map(|r| m[i * d + r] * v[r]).sum();
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut id = vec![0.0; d * d];
    (0..d).for_each(|i| id[i * d + i] = 1.0);
    id
}

fn check_inputs(sys: &CoefficientSystem, x: &SamplePath, noise: &NoiseBundle) -> Result<(), FlowError> {
    if x.grid() != noise.grid() {
        return Err(FlowError::Path(PathError::GridMismatch));
    }
    if x.dim() != sys.dim() || noise.wiener_dim() != sys.wiener_dim() || noise.fbm_dim() != sys.fbm_dim() {
        return Err(FlowError::Shape(format!(
            "trajectory dim {}, noise ({}, {}), system ({}, {}, {})",
            x.dim(),
            noise.wiener_dim(),
            noise.fbm_dim(),
            sys.dim(),
            sys.wiener_dim(),
            sys.fbm_dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Inverse,
}

/// Step generator `G_k` of the linear recursion (`J_{k+1} = (I + G_k) J_k`
/// forward, `Z_{k+1} = Z_k (I + G_k)` inverse), built from the Jacobians at
/// `(t_k, X_k)`.
fn integrate(
    sys: &CoefficientSystem,
    x: &SamplePath,
    noise: &NoiseBundle,
    direction: Direction,
) -> Result<MatrixPath, FlowError> {
    check_inputs(sys, x, noise)?;
    let grid = *x.grid();
    let d = sys.dim();
    let dd = d * d;
    let (m, l) = (sys.wiener_dim(), sys.fbm_dim());
    let dt = grid.dt();
    let sign = if direction == Direction::Forward { 1.0 } else { -1.0 };
    let w = noise.wiener.values();
    let bh = noise.fbm.values();

    let mut data = Vec::with_capacity(grid.len() * dd);
    data.extend(identity(d));
    let mut g = vec![0.0; dd];
    let mut jac = vec![0.0; dd];
    let mut sq = vec![0.0; dd];
    let mut next = vec![0.0; dd];
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let xk = x.at(k);
        let eval = |e| FlowError::Eval { step: k, source: e };
        sys.drift().jacobian_into(t, xk, &mut jac).map_err(eval)?;
        for i in 0..dd {
            g[i] = sign * jac[i] * dt;
        }
        for (j, col) in sys.wiener_columns().iter().enumerate() {
            if col.jacobian_is_zero() {
                continue;
            }
            let dw = w[(k + 1) * m + j] - w[k * m + j];
            col.jacobian_into(t, xk, &mut jac).map_err(eval)?;
            for i in 0..dd {
                g[i] += sign * jac[i] * dw;
            }
            if direction == Direction::Inverse {
                matmul(&jac, &jac, &mut sq, d);
                for i in 0..dd {
                    g[i] += sq[i] * dt;
                }
            }
        }
        for (q, col) in sys.fbm_columns().iter().enumerate() {
            if col.jacobian_is_zero() {
                continue;
            }
            let db = bh[(k + 1) * l + q] - bh[k * l + q];
            col.jacobian_into(t, xk, &mut jac).map_err(eval)?;
            for i in 0..dd {
                g[i] += sign * jac[i] * db;
            }
        }
        let cur = &data[k * dd..(k + 1) * dd];
        match direction {
            Direction::Forward => matmul(&g, cur, &mut next, d),
            Direction::Inverse => matmul(cur, &g, &mut next, d),
        }
        for i in 0..dd {
            next[i] += cur[i];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Overflow(k + 1));
        }
        data.extend_from_slice(&next);
    }
    Ok(MatrixPath { grid, dim: d, data })
}

/// Euler scheme for `J`, `J_0 = I`.
pub fn solve_jacobian(sys: &CoefficientSystem, x: &SamplePath, noise: &NoiseBundle) -> Result<MatrixPath, FlowError> {
    integrate(sys, x, noise, Direction::Forward)
}

/// Euler scheme for `Z`, `Z_0 = I`.
pub fn solve_inverse(sys: &CoefficientSystem, x: &SamplePath, noise: &NoiseBundle) -> Result<MatrixPath, FlowError> {
    integrate(sys, x, noise, Direction::Inverse)
}

/// `J_t Z_s`, the transition Jacobian `J_{t,s}`.
pub fn transition(j: &MatrixPath, z: &MatrixPath, s: usize, t: usize) -> Result<DMatrix<f64>, FlowError> {
    if s > t {
        return Err(FlowError::IndexOrder { s, t });
    }
    let last = j.grid().steps();
    if t > last {
        return Err(FlowError::IndexRange { index: t, last });
    }
    Ok(j.matrix(t) * z.matrix(s))
}

fn frobenius_from_identity(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    (m - DMatrix::<f64>::identity(d, d)).norm()
}

/// `J` and `Z` along one trajectory.
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub j: MatrixPath,
    pub z: MatrixPath,
    /// `max_k ||Z_k J_k - I||_F`
    pub residual: f64,
}

impl FlowPair {
    pub fn solve(sys: &CoefficientSystem, x: &SamplePath, noise: &NoiseBundle) -> Result<FlowPair, FlowError> {
        let j = solve_jacobian(sys, x, noise)?;
        let z = solve_inverse(sys, x, noise)?;
        let residual = residual_profile(&j, &z, false).into_iter().fold(0.0, f64::max);
        Ok(FlowPair { j, z, residual })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.j.grid()
    }

    pub fn dim(&self) -> usize {
        self.j.dim()
    }

    pub fn transition(&self, s: usize, t: usize) -> Result<DMatrix<f64>, FlowError> {
        transition(&self.j, &self.z, s, t)
    }

    /// `max_k ||J_k Z_k - I||_F`.
    pub fn right_residual(&self) -> f64 {
        residual_profile(&self.j, &self.z, true).into_iter().fold(0.0, f64::max)
    }

    pub fn min_det_j(&self) -> f64 {
        self.j.determinants().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// CSV of `time, det_J, residual` per grid point.
    pub fn write_diagnostics_csv<W: Write>(&self, out: W, metadata: &[(&str, String)]) -> Result<(), PathError> {
        let dets = self.j.determinants();
        let res = residual_profile(&self.j, &self.z, false);
        let values = dets.iter().zip(&res).flat_map(|(a, b)| [*a, *b]).collect();
        SamplePath::with_labels(*self.grid(), values, vec!["det_J".into(), "residual".into()])?.write_csv(out, metadata)
    }
}

/// `||Z_k J_k - I||_F` (or `||J_k Z_k - I||_F` when `right` is set) per grid point.
pub fn residual_profile(j: &MatrixPath, z: &MatrixPath, right: bool) -> Vec<f64> {
    (0..j.len())
        .map(|k| {
            let p = if right { j.matrix(k) * z.matrix(k) } else { z.matrix(k) * j.matrix(k) };
            frobenius_from_identity(&p)
        })
        .collect()
}
