//! Malliavin derivatives along a trajectory and the covariance matrices
//!
//! ```text
//! M(t) = Σ_k ∫ (J_{t,s} b_k)(J_{t,s} b_k)' ds + Σ_q ∫∫ φ(s,u) (J_{t,s} c_q)(J_{t,u} c_q)' ds du
//! C(t) = same sums with J_s^{-1} in place of J_{t,s}
//! ```
//!
//! The fractional part never evaluates the singular kernel: on a uniform grid
//! the exact cell integrals of `φ` are `dt^{2H} ρ(|i-j|)` with `ρ` the unit
//! fGn autocovariance, and the resulting Toeplitz products run through an FFT.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use thiserror::Error;

use crate::exprlang::ExprError;
use crate::fields::CoefficientSystem;
use crate::flow::{matvec, FlowError, FlowPair, MatrixPath};
use crate::noise::{fgn_autocovariance, Hurst};
use crate::paths::{PathError, SamplePath, TimeGrid};
use crate::sde::{Experiment, SdeError};
use crate::stats;

#[derive(Debug, Error)]
pub enum MalliavinError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("coefficient evaluation failed at step {step}: {source}")]
    Eval {
        step: usize,
        #[source]
        source: ExprError,
    },
    #[error("grid index {index} out of range (last index {last})")]
    IndexRange { index: usize, last: usize },
    #[error("no such noise component: {0:?}")]
    Direction(NoiseDirection),
    #[error("kernel weights were built for a different grid or Hurst index")]
    KernelMismatch,
    #[error("spectrum ensembles need at least 100 paths, got {0}")]
    TooFewPaths(usize),
    #[error("path {path}: {source}")]
    InPath {
        path: u64,
        #[source]
        source: Box<MalliavinError>,
    },
}

/// Exact cell integral `∫_{t_i}^{t_{i+1}} ∫_{t_j}^{t_{j+1}} φ(s,u) du ds`.
pub fn cell_weight(grid: &TimeGrid, hurst: Hurst, i: usize, j: usize) -> f64 {
    let two_h = 2.0 * hurst.value();
    let t = |k: usize| grid.time(k);
    let p = |x: f64| x.abs().powf(two_h);
    0.5 * (p(t(i + 1) - t(j)) + p(t(i) - t(j + 1)) - p(t(i) - t(j)) - p(t(i + 1) - t(j + 1)))
}

/// Cell-integrated kernel matrix `W_ij` for one `(grid, H)`.
#[derive(Clone)]
pub struct KernelWeights {
    grid: TimeGrid,
    hurst: Hurst,
    lags: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for KernelWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelWeights").field("grid", &self.grid).field("hurst", &self.hurst).finish()
    }
}

impl KernelWeights {
    pub fn new(grid: TimeGrid, hurst: Hurst) -> KernelWeights {
        let n = grid.steps();
        let scale = grid.dt().powf(2.0 * hurst.value());
        let lags: Vec<f64> = (0..n).map(|k| scale * fgn_autocovariance(k, hurst)).collect();
        let size = 2 * n;
        let mut column = vec![Complex::new(0.0, 0.0); size];
        for k in 0..n {
            column[k] = Complex::new(lags[k], 0.0);
            if k > 0 {
                column[size - k] = Complex::new(lags[k], 0.0);
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        let ifft = planner.plan_fft_inverse(size);
        fft.process(&mut column);
        KernelWeights { grid, hurst, lags, spectrum: column, fft, ifft }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.lags[i.abs_diff(j)]
    }

    /// `(W v)_i` for `i < v.len()`, restricted to the first `v.len()` cells.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.grid.steps();
        assert!(v.len() <= n, "vector longer than the grid");
        let size = 2 * n;
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (b, x) in buf.iter_mut().zip(v) {
            *b = Complex::new(*x, 0.0);
        }
        self.fft.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.ifft.process(&mut buf);
        buf.truncate(v.len());
        buf.into_iter().map(|c| c.re / size as f64).collect()
    }

    /// `f' W g` over the first `f.len()` cells.
    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        assert_eq!(f.len(), g.len());
        f.iter().zip(self.apply(g)).map(|(a, b)| a * b).sum()
    }
}

/// `Σ_ij f(t_i) g(t_j) W_ij`: the `L²_H` inner product of the left-point
/// step functions of `f` and `g`.
pub fn lh2_inner(f: &SamplePath, g: &SamplePath, hurst: Hurst) -> Result<f64, PathError> {
    if f.grid() != g.grid() || f.dim() != 1 || g.dim() != 1 {
        return Err(PathError::GridMismatch);
    }
    let n = f.grid().steps();
    let kw = KernelWeights::new(*f.grid(), hurst);
    Ok(kw.bilinear(&f.values()[..n], &g.values()[..n]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NoiseDirection {
    Wiener(usize),
    Fbm(usize),
}

/// `D_s X_t = J_{t,s} σ(s, X_s) 1_{s <= t}` for every grid time `t`, where
/// `σ` is the selected noise column and `J_{t,s} = J_t J_s^{-1}`.
pub fn malliavin_derivatives(
    sys: &CoefficientSystem,
    x: &SamplePath,
    flow: &FlowPair,
    s_index: usize,
    direction: NoiseDirection,
) -> Result<SamplePath, MalliavinError> {
    let last = x.grid().steps();
    if s_index > last {
        return Err(MalliavinError::IndexRange { index: s_index, last });
    }
    let field = match direction {
        NoiseDirection::Wiener(k) => sys.wiener_columns().get(k),
        NoiseDirection::Fbm(q) => sys.fbm_columns().get(q),
    }
    .ok_or(MalliavinError::Direction(direction))?;
    let d = sys.dim();
    let s_time = x.grid().time(s_index);
    let sigma = field
        .eval(s_time, x.at(s_index))
        .map_err(|e| MalliavinError::Eval { step: s_index, source: e })?;
    let js_inv = flow.j.matrix(s_index).try_inverse().ok_or(FlowError::Singular(s_index))?;
    let base = js_inv * nalgebra::DVector::from_column_slice(&sigma);
    let mut values = vec![0.0; x.len() * d];
    let mut out = vec![0.0; d];
    for k in s_index..x.len() {
        matvec(flow.j.at(k), base.as_slice(), &mut out, d);
        values[k * d..(k + 1) * d].copy_from_slice(&out);
    }
    let labels = (1..=d).map(|i| format!("DX{i}")).collect();
    Ok(SamplePath::with_labels(*x.grid(), values, labels)?)
}

/// `M(t)` and the reduced `C(t)` from one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct MalliavinMatrix {
    pub t: f64,
    pub t_index: usize,
    #[serde(serialize_with = "serialize_matrix")]
    pub m: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub c: DMatrix<f64>,
    /// Ascending eigenvalues of `M`.
    pub eigen_m: Vec<f64>,
    /// Ascending eigenvalues of `C`.
    pub eigen_c: Vec<f64>,
    pub det_m: f64,
    pub det_c: f64,
    /// `||M - J_t C J_t'||_F / ||M||_F` (absolute when `M = 0`).
    pub residual: f64,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        seq.serialize_element(&m.row(r).iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

impl MalliavinMatrix {
    pub fn lambda_min_c(&self) -> f64 {
        self.eigen_c[0]
    }

    pub fn lambda_min_m(&self) -> f64 {
        self.eigen_m[0]
    }
}

fn sorted_eigen(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Gram sums `Σ_i u_i u_i' dt` (Wiener) plus `Σ_ij W_ij v_i v_j'` (fBm) where
/// `u_i = P_i b(t_i, X_i)` and `v_i = P_i c(t_i, X_i)` for `i < t_index`.
fn reduced_sum(
    sys: &CoefficientSystem,
    x: &SamplePath,
    pull: &MatrixPath,
    t_index: usize,
    kernel: &KernelWeights,
) -> Result<DMatrix<f64>, MalliavinError> {
    let d = sys.dim();
    let grid = x.grid();
    let dt = grid.dt();
    let mut total = DMatrix::<f64>::zeros(d, d);
    let mut col = vec![0.0; d];
    let mut pulled = vec![0.0; d];
    for field in sys.wiener_columns() {
        for i in 0..t_index {
            field
                .eval_into(grid.time(i), x.at(i), &mut col)
                .map_err(|e| MalliavinError::Eval { step: i, source: e })?;
            matvec(pull.at(i), &col, &mut pulled, d);
            for a in 0..d {
                for b in 0..d {
                    total[(a, b)] += pulled[a] * pulled[b] * dt;
                }
            }
        }
    }
    for field in sys.fbm_columns() {
        // comps[a][i] = a-th component of the pulled-back column at cell i
        let mut comps = vec![vec![0.0; t_index]; d];
        for i in 0..t_index {
            field
                .eval_into(grid.time(i), x.at(i), &mut col)
                .map_err(|e| MalliavinError::Eval { step: i, source: e })?;
            matvec(pull.at(i), &col, &mut pulled, d);
            for a in 0..d {
                comps[a][i] = pulled[a];
            }
        }
        let applied: Vec<Vec<f64>> = comps.iter().map(|c| kernel.apply(c)).collect();
        for a in 0..d {
            for b in 0..d {
                total[(a, b)] += comps[a].iter().zip(&applied[b]).map(|(u, w)| u * w).sum::<f64>();
            }
        }
    }
    Ok(symmetrize(total))
}

/// Assembles `M(t_index)` and `C(t_index)`. `M` uses the exact inverse of the
/// discrete Jacobian, `C` uses the independently solved `Z`, so the residual
/// measures how far `Z` is from `J^{-1}`.
pub fn covariance_matrix(
    sys: &CoefficientSystem,
    x: &SamplePath,
    flow: &FlowPair,
    t_index: usize,
    kernel: &KernelWeights,
) -> Result<MalliavinMatrix, MalliavinError> {
    let last = x.grid().steps();
    if t_index > last {
        return Err(MalliavinError::IndexRange { index: t_index, last });
    }
    if kernel.grid() != x.grid() {
        return Err(MalliavinError::KernelMismatch);
    }
    let j_inv = flow.j.inverse()?;
    let jt = flow.j.matrix(t_index);
    let reduced_exact = reduced_sum(sys, x, &j_inv, t_index, kernel)?;
    let c = reduced_sum(sys, x, &flow.z, t_index, kernel)?;
    let m = symmetrize(&jt * reduced_exact * jt.transpose());
    let jcj = &jt * &c * jt.transpose();
    let diff = (&m - jcj).norm();
    let scale = m.norm();
    let residual = if scale > 0.0 { diff / scale } else { diff };
    Ok(MalliavinMatrix {
        t: x.grid().time(t_index),
        t_index,
        eigen_m: sorted_eigen(&m),
        eigen_c: sorted_eigen(&c),
        det_m: m.determinant(),
        det_c: c.determinant(),
        m,
        c,
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRecord {
    pub path: u64,
    pub lambda_min_c: f64,
    pub lambda_min_m: f64,
    pub det_m: f64,
    pub det_c: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub paths: usize,
    pub t: f64,
    /// `(level, quantile of λ_min(C))`
    pub lambda_min_quantiles: Vec<(f64, f64)>,
    pub det_m_quantiles: Vec<(f64, f64)>,
    /// `(ε, frequency{λ_min(C) <= ε})`
    pub frequencies: Vec<(f64, f64)>,
    pub max_residual: f64,
    #[serde(skip)]
    pub records: Vec<SpectrumRecord>,
}

pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// `10^{-12}, 10^{-11}, .., 10^0`.
pub fn default_epsilon_grid() -> Vec<f64> {
    (-12..=0).map(|e| 10f64.powi(e)).collect()
}

/// One matrix per path at the experiment horizon.
pub fn spectrum_ensemble(
    exp: &Experiment,
    paths: usize,
    epsilons: &[f64],
) -> Result<SpectrumSummary, MalliavinError> {
    if paths < 100 {
        return Err(MalliavinError::TooFewPaths(paths));
    }
    let kernel = KernelWeights::new(*exp.grid(), exp.source.hurst());
    let t_index = exp.grid().steps();
    let records = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let one = || -> Result<SpectrumRecord, MalliavinError> {
                let (noise, x) = exp.solve(p)?;
                let flow = FlowPair::solve(&exp.sys, &x, &noise)?;
                let mm = covariance_matrix(&exp.sys, &x, &flow, t_index, &kernel)?;
                Ok(SpectrumRecord {
                    path: p,
                    lambda_min_c: mm.lambda_min_c(),
                    lambda_min_m: mm.lambda_min_m(),
                    det_m: mm.det_m,
                    det_c: mm.det_c,
                    residual: mm.residual,
                })
            };
            one().map_err(|e| MalliavinError::InPath { path: p, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(records, exp.grid().horizon(), epsilons))
}

pub fn summarize(records: Vec<SpectrumRecord>, t: f64, epsilons: &[f64]) -> SpectrumSummary {
    let mut lam: Vec<f64> = records.iter().map(|r| r.lambda_min_c).collect();
    let mut det: Vec<f64> = records.iter().map(|r| r.det_m).collect();
    lam.sort_by(f64::total_cmp);
    det.sort_by(f64::total_cmp);
    let n = lam.len() as f64;
    SpectrumSummary {
        paths: records.len(),
        t,
        lambda_min_quantiles: QUANTILE_LEVELS.iter().map(|&q| (q, stats::quantile_sorted(&lam, q))).collect(),
        det_m_quantiles: QUANTILE_LEVELS.iter().map(|&q| (q, stats::quantile_sorted(&det, q))).collect(),
        frequencies: epsilons
            .iter()
            .map(|&e| (e, lam.partition_point(|v| *v <= e) as f64 / n))
            .collect(),
        max_residual: records.iter().map(|r| r.residual).fold(0.0, f64::max),
        records,
    }
}

impl SpectrumSummary {
    /// CSV `path,lambda_min_c,lambda_min_m,det_m,det_c,residual`.
    pub fn write_csv<W: Write>(&self, out: W, metadata: &[(&str, String)]) -> Result<(), PathError> {
        let mut out = out;
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "lambda_min_c", "lambda_min_m", "det_m", "det_c", "residual"])?;
        for r in &self.records {
            w.write_record([
                r.path.to_string(),
                format!("{:?}", r.lambda_min_c),
                format!("{:?}", r.lambda_min_m),
                format!("{:?}", r.det_m),
                format!("{:?}", r.det_c),
                format!("{:?}", r.residual),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{preset, PresetParams};

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    fn experiment(name: &str, p: PresetParams, x0: Vec<f64>, n: usize, hurst: f64, seed: u64) -> Experiment {
        Experiment::new(preset(name, &p).unwrap(), x0, TimeGrid::new(1.0, n).unwrap(), h(hurst), seed).unwrap()
    }

    #[test]
    fn fft_product_matches_direct_sum() {
        let grid = TimeGrid::new(1.3, 200).unwrap();
        for hv in [0.55, 0.75, 0.95] {
            let kw = KernelWeights::new(grid, h(hv));
            let v: Vec<f64> = (0..150).map(|i| ((i * 7 % 13) as f64 - 6.0) / 3.0).collect();
            let fast = kw.apply(&v);
            for (i, f) in fast.iter().enumerate() {
                let direct: f64 = (0..150).map(|j| cell_weight(&grid, h(hv), i, j) * v[j]).sum();
                assert!((f - direct).abs() < 1e-12, "{f} vs {direct}");
                assert!((kw.weight(i, 3) - cell_weight(&grid, h(hv), i, 3)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn total_mass_is_t_to_the_2h() {
        let grid = TimeGrid::new(1.0, 1 << 10).unwrap();
        for hv in [0.6, 0.75] {
            let kw = KernelWeights::new(grid, h(hv));
            for t in [0.25, 0.5, 1.0] {
                let len = grid.index_of(t).unwrap();
                let s: f64 = kw.apply(&vec![1.0; len]).iter().sum();
                assert!((s - t.powf(2.0 * hv)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lh2_examples() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let one = SamplePath::from_fn(grid, |_| 1.0).unwrap();
        let ind = SamplePath::from_fn(grid, |t| if t < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let zero = SamplePath::zeros(grid, 1);
        assert!((lh2_inner(&one, &one, h(0.6)).unwrap() - 1.0).abs() < 1e-12);
        assert!((lh2_inner(&ind, &ind, h(0.75)).unwrap() - 0.5f64.powf(1.5)).abs() < 1e-12);
        assert_eq!(lh2_inner(&zero, &one, h(0.7)).unwrap(), 0.0);
    }

    #[test]
    fn additive_closed_form() {
        let p = PresetParams { sigma: 2.0, gamma: 3.0, ..Default::default() };
        let e = experiment("additive", p, vec![0.5], 256, 0.75, 1);
        let kernel = KernelWeights::new(*e.grid(), h(0.75));
        let (noise, x) = e.solve(0).unwrap();
        let flow = FlowPair::solve(&e.sys, &x, &noise).unwrap();
        let mm = covariance_matrix(&e.sys, &x, &flow, 256, &kernel).unwrap();
        assert!((mm.m[(0, 0)] - 13.0).abs() < 1e-6);
        assert!((mm.c[(0, 0)] - 13.0).abs() < 1e-6);
        assert!(mm.residual < 1e-12);
        // half horizon: 4 * 0.5 + 9 * 0.5^{1.5}
        let half = covariance_matrix(&e.sys, &x, &flow, 128, &kernel).unwrap();
        assert!((half.m[(0, 0)] - (2.0 + 9.0 * 0.5f64.powf(1.5))).abs() < 1e-9);
    }

    #[test]
    fn wiener_only_and_zero_systems() {
        let sys = CoefficientSystem::autonomous("w", &["0"], &[&["1"]], &[]).unwrap();
        let e = Experiment::new(sys, vec![0.0], TimeGrid::new(1.0, 128).unwrap(), h(0.7), 2).unwrap();
        let kernel = KernelWeights::new(*e.grid(), h(0.7));
        let (noise, x) = e.solve(0).unwrap();
        let flow = FlowPair::solve(&e.sys, &x, &noise).unwrap();
        let mm = covariance_matrix(&e.sys, &x, &flow, 64, &kernel).unwrap();
        assert!((mm.m[(0, 0)] - 0.5).abs() < 1e-8);

        let zero = preset("additive", &PresetParams { sigma: 0.0, gamma: 0.0, dim: 2, mu: 0.0 }).unwrap();
        let e = Experiment::new(zero, vec![0.0, 0.0], TimeGrid::new(1.0, 32).unwrap(), h(0.7), 2).unwrap();
        let kernel = KernelWeights::new(*e.grid(), h(0.7));
        let (noise, x) = e.solve(0).unwrap();
        let flow = FlowPair::solve(&e.sys, &x, &noise).unwrap();
        let mm = covariance_matrix(&e.sys, &x, &flow, 32, &kernel).unwrap();
        assert_eq!(mm.m, DMatrix::zeros(2, 2));
    }

    #[test]
    fn derivative_examples() {
        let p = PresetParams { sigma: 2.0, gamma: 3.0, dim: 2, mu: 0.0 };
        let e = experiment("additive", p, vec![0.0, 0.0], 64, 0.7, 3);
        let (noise, x) = e.solve(0).unwrap();
        let flow = FlowPair::solve(&e.sys, &x, &noise).unwrap();
        let d = malliavin_derivatives(&e.sys, &x, &flow, 20, NoiseDirection::Fbm(1)).unwrap();
        for k in 0..d.len() {
            let expected: &[f64] = if k < 20 { &[0.0, 0.0] } else { &[0.0, 3.0] };
            assert_eq!(d.at(k), expected);
        }
        assert!(malliavin_derivatives(&e.sys, &x, &flow, 65, NoiseDirection::Wiener(0)).is_err());
        assert!(malliavin_derivatives(&e.sys, &x, &flow, 3, NoiseDirection::Wiener(2)).is_err());
    }

    #[test]
    fn bump_oracle_linear_system() {
        // Perturb one Wiener increment and compare the response with J_{t,s} b(X_s).
        let p = PresetParams { mu: 0.2, sigma: 0.3, gamma: 0.2, dim: 1 };
        let e = experiment("geometric", p, vec![1.0], 1 << 12, 0.75, 4);
        let (noise, x) = e.solve(0).unwrap();
        let flow = FlowPair::solve(&e.sys, &x, &noise).unwrap();
        let eps = 1e-4;
        let s = 1200;
        let mut bumped = noise.clone();
        let mut w = bumped.wiener.values().to_vec();
        for v in w.iter_mut().skip(s + 1) {
            *v += eps;
        }
        bumped.wiener = SamplePath::with_labels(*x.grid(), w, vec!["W1".into()]).unwrap();
        let xb = e.solve_with(&bumped).unwrap();
        let der = malliavin_derivatives(&e.sys, &x, &flow, s, NoiseDirection::Wiener(0)).unwrap();
        for t in [1600, 2800, 4096] {
            let fd = (xb.at(t)[0] - x.at(t)[0]) / eps;
            assert!((fd / der.at(t)[0] - 1.0).abs() < 2e-2, "t={t}: {fd} vs {}", der.at(t)[0]);
        }
    }

    #[test]
    fn bounded_smooth_is_psd_and_consistent() {
        let e = experiment("bounded-smooth", PresetParams::default(), vec![0.3, -0.4], 1 << 11, 0.7, 5);
        let kernel = KernelWeights::new(*e.grid(), h(0.7));
        for p in 0..3 {
            let (noise, x) = e.solve(p).unwrap();
            let flow = FlowPair::solve(&e.sys, &x, &noise).unwrap();
            let mm = covariance_matrix(&e.sys, &x, &flow, 1 << 11, &kernel).unwrap();
            assert!(mm.eigen_m[0] >= -1e-10 && mm.eigen_c[0] >= -1e-10);
            assert!((&mm.m - mm.m.transpose()).norm() <= 1e-10);
            assert!(mm.residual < 5e-2, "{}", mm.residual);
        }
    }

    #[test]
    fn spectrum_additive_and_degenerate() {
        let e = experiment("additive", PresetParams { dim: 2, ..Default::default() }, vec![0.0, 0.0], 64, 0.7, 6);
        let s = spectrum_ensemble(&e, 100, &default_epsilon_grid()).unwrap();
        assert!(s.frequencies.iter().all(|(eps, f)| *eps > 1.5 || *f == 0.0));
        assert!(s.lambda_min_quantiles.iter().all(|(_, v)| (*v - 2.0).abs() < 1e-9));
        assert!(s.frequencies.windows(2).all(|w| w[0].1 <= w[1].1));

        let e = experiment("degenerate", PresetParams::default(), vec![0.0, 0.0], 64, 0.6, 7);
        let s = spectrum_ensemble(&e, 100, &default_epsilon_grid()).unwrap();
        assert!(s.records.iter().all(|r| r.lambda_min_c <= 1e-10));
        assert!(matches!(spectrum_ensemble(&e, 10, &[]), Err(MalliavinError::TooFewPaths(10))));
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 101);
    }
}
