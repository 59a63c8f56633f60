//! Wiener and fractional Brownian driving noise on a uniform grid.

mod fbm;
pub mod streams;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use fbm::{fgn_autocovariance, FbmGenerator, FbmMethod};
pub use streams::{stream_rng, Stream};

use crate::paths::{PathError, SamplePath, TimeGrid};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("Hurst index must lie in [1/2, 1), got {0}")]
    InvalidHurst(f64),
    #[error("phi kernel is singular on the diagonal t = s = {0}")]
    SingularKernel(f64),
    #[error("circulant embedding spectrum is negative (min eigenvalue {min}) and fallback is disabled")]
    NegativeSpectrum { min: f64 },
    #[error("increment covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("driving paths must share the grid and start at zero")]
    InvalidBundle,
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Hurst index of the fractional noise.
///
/// `H = 1/2` is accepted as the Brownian reduction used for cross-checks;
/// experiments on mixed equations require `1/2 < H < 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(h: f64) -> Result<Hurst, NoiseError> {
        if (0.5..1.0).contains(&h) {
            Ok(Hurst(h))
        } else {
            Err(NoiseError::InvalidHurst(h))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1/2 < H < 2/3`, the window of the strong bracket condition.
    pub fn in_strong_window(self) -> bool {
        self.0 > 0.5 && self.0 < 2.0 / 3.0
    }
}

/// `E[B_t B_s] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(t: f64, s: f64, hurst: Hurst) -> f64 {
    let two_h = 2.0 * hurst.value();
    0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h))
}

/// `phi(t, s) = H (2H - 1) |t - s|^{2H - 2}`, undefined on the diagonal.
pub fn phi_kernel(t: f64, s: f64, hurst: Hurst) -> Result<f64, NoiseError> {
    if t == s {
        return Err(NoiseError::SingularKernel(t));
    }
    let h = hurst.value();
    Ok(h * (2.0 * h - 1.0) * (t - s).abs().powf(2.0 * h - 2.0))
}

/// `components` independent Brownian motions started at zero.
pub fn sample_wiener<R: Rng + ?Sized>(grid: TimeGrid, components: usize, rng: &mut R) -> SamplePath {
    let sd = grid.dt().sqrt();
    let mut values = vec![0.0; grid.len() * components];
    for c in 0..components {
        for k in 0..grid.steps() {
            let dw: f64 = rng.sample(StandardNormal);
            values[(k + 1) * components + c] = values[k * components + c] + sd * dw;
        }
    }
    SamplePath::new(grid, components, values).expect("finite Gaussian path")
}

/// `components` independent fractional Brownian motions started at zero.
pub fn sample_fbm<R: Rng + ?Sized>(
    grid: TimeGrid,
    components: usize,
    hurst: Hurst,
    rng: &mut R,
) -> Result<SamplePath, NoiseError> {
    let generator = FbmGenerator::new(grid, hurst, FbmMethod::Circulant, true)?;
    let columns: Vec<Vec<f64>> = (0..components).map(|_| generator.path_values(rng)).collect();
    Ok(interleave(grid, &columns, "B"))
}

fn interleave(grid: TimeGrid, columns: &[Vec<f64>], prefix: &str) -> SamplePath {
    let dim = columns.len();
    let mut values = vec![0.0; grid.len() * dim];
    for (c, col) in columns.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            values[k * dim + c] = *v;
        }
    }
    let labels = (1..=dim).map(|i| format!("{prefix}{i}")).collect();
    SamplePath::with_labels(grid, values, labels).expect("finite Gaussian path")
}

/// Wiener and fractional driving paths for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub wiener: SamplePath,
    pub fbm: SamplePath,
    pub seed: u64,
    pub path_index: u64,
    pub hurst: Hurst,
}

impl NoiseBundle {
    pub fn new(
        wiener: SamplePath,
        fbm: SamplePath,
        seed: u64,
        path_index: u64,
        hurst: Hurst,
    ) -> Result<NoiseBundle, NoiseError> {
        let starts_at_zero = |p: &SamplePath| p.at(0).iter().all(|v| *v == 0.0);
        if wiener.grid() != fbm.grid() || !starts_at_zero(&wiener) || !starts_at_zero(&fbm) {
            return Err(NoiseError::InvalidBundle);
        }
        Ok(NoiseBundle { wiener, fbm, seed, path_index, hurst })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.wiener.grid()
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener.dim()
    }

    pub fn fbm_dim(&self) -> usize {
        self.fbm.dim()
    }

    /// Restriction of both drivers to every `factor`-th grid point; exact in
    /// law on the coarse grid and pathwise coupled with the fine one.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseBundle, NoiseError> {
        Ok(NoiseBundle {
            wiener: self.wiener.coarsen(factor)?,
            fbm: self.fbm.coarsen(factor)?,
            ..self.clone()
        })
    }
}

/// Reproducible source of [`NoiseBundle`]s: path `i` is a pure function of
/// `(seed, i)` through [`stream_rng`].
#[derive(Debug, Clone)]
pub struct NoiseSource {
    grid: TimeGrid,
    hurst: Hurst,
    wiener_dim: usize,
    fbm_dim: usize,
    seed: u64,
    generator: Option<FbmGenerator>,
}

impl NoiseSource {
    pub fn new(
        grid: TimeGrid,
        hurst: Hurst,
        wiener_dim: usize,
        fbm_dim: usize,
        seed: u64,
    ) -> Result<NoiseSource, NoiseError> {
        Self::with_method(grid, hurst, wiener_dim, fbm_dim, seed, FbmMethod::Circulant)
    }

    pub fn with_method(
        grid: TimeGrid,
        hurst: Hurst,
        wiener_dim: usize,
        fbm_dim: usize,
        seed: u64,
        method: FbmMethod,
    ) -> Result<NoiseSource, NoiseError> {
        let generator = if fbm_dim > 0 {
            Some(FbmGenerator::new(grid, hurst, method, true)?)
        } else {
            None
        };
        Ok(NoiseSource { grid, hurst, wiener_dim, fbm_dim, seed, generator })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bundle(&self, path_index: u64) -> NoiseBundle {
        let sd = self.grid.dt().sqrt();
        let wiener_cols: Vec<Vec<f64>> = (0..self.wiener_dim)
            .map(|j| {
                let mut rng = stream_rng(self.seed, path_index, Stream::Wiener(j));
                let mut acc = 0.0;
                std::iter::once(0.0)
                    .chain((0..self.grid.steps()).map(|_| {
                        acc += sd * rng.sample::<f64, _>(StandardNormal);
                        acc
                    }))
                    .collect()
            })
            .collect();
        let fbm_cols: Vec<Vec<f64>> = (0..self.fbm_dim)
            .map(|q| {
                let mut rng = stream_rng(self.seed, path_index, Stream::Fbm(q));
                self.generator.as_ref().expect("generator exists when fbm_dim > 0").path_values(&mut rng)
            })
            .collect();
        NoiseBundle {
            wiener: interleave(self.grid, &wiener_cols, "W"),
            fbm: interleave(self.grid, &fbm_cols, "B"),
            seed: self.seed,
            path_index,
            hurst: self.hurst,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    #[test]
    fn hurst_range() {
        assert!(Hurst::new(0.5).is_ok());
        assert!(Hurst::new(0.49).is_err());
        assert!(Hurst::new(1.0).is_err());
        assert!(h(0.6).in_strong_window());
        assert!(!h(0.7).in_strong_window());
        assert!(!h(0.5).in_strong_window());
    }

    #[test]
    fn covariance_examples() {
        assert!((fbm_covariance(1.0, 1.0, h(0.75)) - 1.0).abs() < 1e-15);
        assert!((fbm_covariance(2.0, 3.0, h(0.5)) - 2.0).abs() < 1e-14);
        for t in [0.3, 1.0, 7.5] {
            assert!(fbm_covariance(t, 0.0, h(0.8)).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_examples() {
        assert!((phi_kernel(1.0, 0.0, h(0.75)).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(phi_kernel(0.2, 0.9, h(0.7)).unwrap(), phi_kernel(0.9, 0.2, h(0.7)).unwrap());
        // 0.6 * 0.2 * 0.25^{-0.8}
        let v = phi_kernel(0.5, 0.25, h(0.6)).unwrap();
        assert!((v - 0.363_771_975_962_495_5).abs() < 1e-12, "{v}");
        assert!(matches!(phi_kernel(0.4, 0.4, h(0.7)), Err(NoiseError::SingularKernel(_))));
    }

    #[test]
    fn wiener_is_deterministic_and_has_right_variance() {
        let grid = TimeGrid::new(2.0, 1 << 14).unwrap();
        let a = sample_wiener(grid, 2, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_wiener(grid, 2, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert_eq!(a.at(0), &[0.0, 0.0]);

        // 2^14 steps x 7 paths > 1e5 increments per component.
        let mut incs = Vec::new();
        let mut cross = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..7 {
            let p = sample_wiener(grid, 2, &mut rng);
            for k in 0..grid.steps() {
                incs.push(p.increment(k, 0));
                cross.push(p.increment(k, 0) * p.increment(k, 1));
            }
        }
        let dt = grid.dt();
        let var = incs.iter().map(|d| d * d).sum::<f64>() / incs.len() as f64;
        // Var of dW^2 is 2 dt^2.
        let se = (2.0f64).sqrt() * dt / (incs.len() as f64).sqrt();
        assert!((var - dt).abs() < 3.0 * se, "{var} vs {dt}");
        let (m, se_c) = stats::mean_and_se(&cross);
        assert!(m.abs() < 3.0 * se_c);
    }

    #[test]
    fn brownian_reduction_passes_ks() {
        let grid = TimeGrid::new(1.0, 1 << 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut incs = Vec::new();
        while incs.len() < 10_000 {
            let p = sample_fbm(grid, 1, h(0.5), &mut rng).unwrap();
            incs.extend((0..grid.steps()).map(|k| p.increment(k, 0)));
        }
        incs.truncate(10_000);
        let sd = grid.dt().sqrt();
        let (_, p) = stats::ks_one_sample(&incs, |x| stats::normal_cdf(x / sd));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn fbm_is_deterministic() {
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let a = sample_fbm(grid, 2, h(0.7), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_fbm(grid, 2, h(0.7), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let src = NoiseSource::new(grid, h(0.7), 2, 1, 44).unwrap();
        assert_eq!(src.bundle(9), src.bundle(9));
        assert_ne!(src.bundle(9).wiener, src.bundle(10).wiener);
    }

    #[test]
    fn bundle_validation() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let other = TimeGrid::new(1.0, 8).unwrap();
        let bad = SamplePath::new(grid, 1, vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(NoiseBundle::new(SamplePath::zeros(grid, 1), bad, 0, 0, h(0.6)).is_err());
        assert!(NoiseBundle::new(SamplePath::zeros(grid, 1), SamplePath::zeros(other, 1), 0, 0, h(0.6)).is_err());
        let ok = NoiseBundle::new(SamplePath::zeros(grid, 1), SamplePath::zeros(grid, 0), 0, 0, h(0.6)).unwrap();
        assert_eq!(ok.coarsen(2).unwrap().grid().steps(), 2);
    }
}
