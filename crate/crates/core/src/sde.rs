//! Left-point Euler scheme for the mixed equation
//!
//! ```text
//! X_{k+1} = X_k + a(t_k, X_k) dt + b(t_k, X_k) dW_k + c(t_k, X_k) dB_k
//! ```
//!
//! The left-point rule is simultaneously the Itô sum for `W` and the Young
//! sum for `B^H` (`H > 1/2`).

use thiserror::Error;

use crate::exprlang::ExprError;
use crate::fields::{CoefficientSystem, FieldError};
use crate::noise::{Hurst, NoiseBundle, NoiseError, NoiseSource};
use crate::paths::{PathError, SamplePath, TimeGrid};

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("state overflow at step {step} (t = {time})")]
    Overflow { step: usize, time: f64 },
    #[error("invalid solve configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("coefficient evaluation failed at step {step}: {source}")]
    Eval {
        step: usize,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Everything a single pathwise solve needs. The grid is the noise grid.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig<'a> {
    pub sys: &'a CoefficientSystem,
    pub x0: &'a [f64],
    pub noise: &'a NoiseBundle,
}

impl<'a> SolveConfig<'a> {
    pub fn new(sys: &'a CoefficientSystem, x0: &'a [f64], noise: &'a NoiseBundle) -> Result<Self, SdeError> {
        if x0.len() != sys.dim() {
            return Err(SdeError::Config(format!("x0 has {} entries, system dimension is {}", x0.len(), sys.dim())));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Config("x0 must be finite".into()));
        }
        if noise.wiener_dim() != sys.wiener_dim() || noise.fbm_dim() != sys.fbm_dim() {
            return Err(SdeError::Config(format!(
                "noise has {} Wiener and {} fBm components, system needs {} and {}",
                noise.wiener_dim(),
                noise.fbm_dim(),
                sys.wiener_dim(),
                sys.fbm_dim()
            )));
        }
        Ok(SolveConfig { sys, x0, noise })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.noise.grid()
    }
}

/// Solves the equation on the noise grid and returns the full trajectory.
pub fn solve_mixed_euler(cfg: &SolveConfig<'_>) -> Result<SamplePath, SdeError> {
    let sys = cfg.sys;
    let grid = *cfg.grid();
    let d = sys.dim();
    let dt = grid.dt();
    let (m, l) = (sys.wiener_dim(), sys.fbm_dim());
    let w = cfg.noise.wiener.values();
    let b_path = cfg.noise.fbm.values();

    let mut values = Vec::with_capacity(grid.len() * d);
    values.extend_from_slice(cfg.x0);
    let mut x = cfg.x0.to_vec();
    let mut next = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let eval = |e: ExprError| SdeError::Eval { step: k, source: e };
        sys.drift().eval_into(t, &x, &mut buf).map_err(eval)?;
        for i in 0..d {
            next[i] = x[i] + buf[i] * dt;
        }
        for (j, col) in sys.wiener_columns().iter().enumerate() {
            let dw = w[(k + 1) * m + j] - w[k * m + j];
            col.eval_into(t, &x, &mut buf).map_err(eval)?;
            for i in 0..d {
                next[i] += buf[i] * dw;
            }
        }
        for (q, col) in sys.fbm_columns().iter().enumerate() {
            let db = b_path[(k + 1) * l + q] - b_path[k * l + q];
            col.eval_into(t, &x, &mut buf).map_err(eval)?;
            for i in 0..d {
                next[i] += buf[i] * db;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Overflow { step: k + 1, time: grid.time(k + 1) });
        }
        std::mem::swap(&mut x, &mut next);
        values.extend_from_slice(&x);
    }
    Ok(SamplePath::new(grid, d, values)?)
}

fn check_scalar_pair(f: &SamplePath, g: &SamplePath) -> Result<(), SdeError> {
    if f.grid() != g.grid() {
        return Err(PathError::GridMismatch.into());
    }
    if f.dim() != 1 || g.dim() != 1 {
        return Err(SdeError::Config("integrals take scalar paths".into()));
    }
    Ok(())
}

fn left_point_sum(f: &SamplePath, g: &SamplePath) -> f64 {
    let (fv, gv) = (f.values(), g.values());
    (0..f.grid().steps()).map(|k| fv[k] * (gv[k + 1] - gv[k])).sum()
}

/// Left-point Riemann–Stieltjes sum `Σ f(t_k) (g(t_{k+1}) - g(t_k))`.
pub fn young_integral(f: &SamplePath, g: &SamplePath) -> Result<f64, SdeError> {
    check_scalar_pair(f, g)?;
    Ok(left_point_sum(f, g))
}

/// Left-point Itô sum; `f` must be adapted (not checked).
pub fn ito_integral(f: &SamplePath, w: &SamplePath) -> Result<f64, SdeError> {
    check_scalar_pair(f, w)?;
    Ok(left_point_sum(f, w))
}

/// A solve template: system, initial point and a reproducible noise source.
/// Path `i` depends only on `(seed, i)`.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub sys: CoefficientSystem,
    pub x0: Vec<f64>,
    pub source: NoiseSource,
}

impl Experiment {
    pub fn new(sys: CoefficientSystem, x0: Vec<f64>, grid: TimeGrid, hurst: Hurst, seed: u64) -> Result<Self, SdeError> {
        if x0.len() != sys.dim() {
            return Err(SdeError::Config(format!("x0 has {} entries, system dimension is {}", x0.len(), sys.dim())));
        }
        let source = NoiseSource::new(grid, hurst, sys.wiener_dim(), sys.fbm_dim(), seed)?;
        Ok(Experiment { sys, x0, source })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.source.grid()
    }

    pub fn noise(&self, path_index: u64) -> NoiseBundle {
        self.source.bundle(path_index)
    }

    pub fn solve_with(&self, noise: &NoiseBundle) -> Result<SamplePath, SdeError> {
        solve_mixed_euler(&SolveConfig::new(&self.sys, &self.x0, noise)?)
    }

    pub fn solve(&self, path_index: u64) -> Result<(NoiseBundle, SamplePath), SdeError> {
        let noise = self.noise(path_index);
        let x = self.solve_with(&noise)?;
        Ok((noise, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{preset, PresetParams};
    use crate::stats;

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    fn sys(drift: &[&str], wiener: &[&[&str]], fbm: &[&[&str]]) -> CoefficientSystem {
        CoefficientSystem::autonomous("test", drift, wiener, fbm).unwrap()
    }

    #[test]
    fn zero_dynamics_stay_put() {
        let e = Experiment::new(sys(&["0", "0"], &[&["0"], &["0"]], &[&["0"], &["0"]]), vec![1.5, -2.0], TimeGrid::new(1.0, 64).unwrap(), h(0.7), 1).unwrap();
        let (_, x) = e.solve(0).unwrap();
        assert!((0..x.len()).all(|k| x.at(k) == [1.5, -2.0]));
    }

    #[test]
    fn unit_drift_is_exact() {
        let e = Experiment::new(sys(&["1"], &[&["0"]], &[&["0"]]), vec![0.0], TimeGrid::new(1.0, 64).unwrap(), h(0.7), 1).unwrap();
        let (_, x) = e.solve(3).unwrap();
        for (k, t) in x.grid().times().enumerate() {
            assert!((x.at(k)[0] - t).abs() < 1e-14);
        }
    }

    #[test]
    fn young_linear_equation_converges_to_exponential() {
        // dX = X dB^H with X_0 = 1 solves to exp(B_t); coarsened noise couples the grids.
        let e = Experiment::new(sys(&["0"], &[&["0"]], &[&["x1"]]), vec![1.0], TimeGrid::new(1.0, 1 << 12).unwrap(), h(0.75), 7).unwrap();
        let mut errs = vec![Vec::new(); 3];
        for p in 0..20 {
            let fine = e.noise(p);
            let exact = fine.fbm.last()[0].exp();
            for (i, factor) in [4usize, 2, 1].iter().enumerate() {
                let x = e.solve_with(&fine.coarsen(*factor).unwrap()).unwrap();
                errs[i].push((x.last()[0] - exact).abs());
            }
        }
        let med: Vec<f64> = errs.iter().map(|v| stats::median(v)).collect();
        assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
        assert!(med[2] < 0.05);
    }

    #[test]
    fn ito_geometric_law() {
        let e = Experiment::new(sys(&["0"], &[&["x1"]], &[&["0"]]), vec![1.0], TimeGrid::new(1.0, 1 << 10).unwrap(), h(0.7), 3).unwrap();
        let logs: Vec<f64> = (0..2000).map(|p| e.solve(p).unwrap().1.last()[0].ln()).collect();
        // log X_1 ~ N(-1/2, 1)
        let (_, p) = stats::ks_one_sample(&logs, |v| stats::normal_cdf(v + 0.5));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn integrals() {
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let one = SamplePath::from_fn(g, |_| 1.0).unwrap();
        let id = SamplePath::from_fn(g, |t| t).unwrap();
        let sq = SamplePath::from_fn(g, |t| t * t - 0.3).unwrap();
        assert!((young_integral(&one, &sq).unwrap() - 1.0).abs() < 1e-12);
        let v = young_integral(&id, &id).unwrap();
        assert!((v - 0.5).abs() < 1e-3 && v < 0.5);
        let other = SamplePath::from_fn(TimeGrid::new(1.0, 10).unwrap(), |t| t).unwrap();
        assert!(matches!(ito_integral(&one, &other), Err(SdeError::Path(PathError::GridMismatch))));
    }

    #[test]
    fn ito_integral_of_w_against_w() {
        let src = NoiseSource::new(TimeGrid::new(1.0, 256).unwrap(), h(0.6), 1, 0, 5).unwrap();
        let mut diffs = Vec::new();
        let mut vals = Vec::new();
        for p in 0..2000 {
            let w = src.bundle(p).wiener;
            let i = ito_integral(&w, &w).unwrap();
            let wt = w.last()[0];
            diffs.push(i - (wt * wt - 1.0) / 2.0);
            vals.push(i);
        }
        // Discretization error is -(Σ dW^2 - 1)/2, mean zero with sd ~ sqrt(2/n)/2.
        assert!(diffs.iter().all(|d| d.abs() < 0.3));
        let (m, se) = stats::mean_and_se(&vals);
        assert!(m.abs() < 3.0 * se);
    }

    #[test]
    fn determinism_and_overflow() {
        let sys = preset("bounded-smooth", &PresetParams::default()).unwrap();
        let e = Experiment::new(sys, vec![0.1, 0.2], TimeGrid::new(1.0, 256).unwrap(), h(0.6), 9).unwrap();
        assert_eq!(e.solve(4).unwrap().1, e.solve(4).unwrap().1);

        let blow = Experiment::new(
            CoefficientSystem::autonomous("blow", &["x1 * x1"], &[&["0"]], &[&["0"]]).unwrap(),
            vec![10.0],
            TimeGrid::new(1.0, 64).unwrap(),
            h(0.6),
            0,
        )
        .unwrap();
        assert!(matches!(blow.solve(0), Err(SdeError::Overflow { .. })));
    }

    #[test]
    fn config_validation() {
        let s = sys(&["0"], &[&["1"]], &[]);
        let src = NoiseSource::new(TimeGrid::new(1.0, 8).unwrap(), h(0.6), 1, 1, 0).unwrap();
        let n = src.bundle(0);
        assert!(SolveConfig::new(&s, &[0.0], &n).is_err());
        let s2 = sys(&["0"], &[&["1"]], &[&["1"]]);
        assert!(SolveConfig::new(&s2, &[0.0, 1.0], &n).is_err());
        assert!(SolveConfig::new(&s2, &[f64::NAN], &n).is_err());
        assert!(SolveConfig::new(&s2, &[0.0], &n).is_ok());
    }
}
