//! Exact fractional Gaussian noise on a uniform grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Hurst, NoiseError};
use crate::paths::{SamplePath, TimeGrid};

/// Autocovariance of unit-spacing fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: Hurst) -> f64 {
    let two_h = 2.0 * hurst.value();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmMethod {
    /// Circulant embedding of the increment covariance, O(n log n) per path.
    Circulant,
    /// Cholesky factor of the full increment covariance, O(n^2) per path.
    Cholesky,
}

#[derive(Clone)]
enum Factor {
    Circulant {
        // sqrt(lambda_k / (4n)) for k = 0..=n; the k = 0, n entries use 2n.
        scales: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky(DMatrix<f64>),
}

/// Precomputed generator for one `(grid, H)` pair.
#[derive(Clone)]
pub struct FbmGenerator {
    grid: TimeGrid,
    hurst: Hurst,
    factor: Factor,
}

impl std::fmt::Debug for FbmGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmGenerator")
            .field("grid", &self.grid)
            .field("hurst", &self.hurst)
            .field("method", &self.method())
            .finish()
    }
}

impl FbmGenerator {
    /// Circulant embedding, falling back to Cholesky when the embedding
    /// spectrum is negative and `fallback` is set.
    pub fn new(grid: TimeGrid, hurst: Hurst, method: FbmMethod, fallback: bool) -> Result<Self, NoiseError> {
        match method {
            FbmMethod::Cholesky => Self::cholesky(grid, hurst),
            FbmMethod::Circulant => match Self::circulant(grid, hurst) {
                Err(NoiseError::NegativeSpectrum { .. }) if fallback => Self::cholesky(grid, hurst),
                other => other,
            },
        }
    }

    fn circulant(grid: TimeGrid, hurst: Hurst) -> Result<Self, NoiseError> {
        let n = grid.steps();
        let size = 2 * n;
        let mut row: Vec<Complex<f64>> = (0..size)
            .map(|k| {
                let lag = if k <= n { k } else { size - k };
                Complex::new(fgn_autocovariance(lag, hurst), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut row);
        let largest = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        let smallest = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if smallest < -1e-10 * largest {
            return Err(NoiseError::NegativeSpectrum { min: smallest });
        }
        let scales = (0..=n)
            .map(|k| {
                let lambda = row[k].re.max(0.0);
                let denom = if k == 0 || k == n { 2.0 } else { 4.0 } * n as f64;
                (lambda / denom).sqrt()
            })
            .collect();
        Ok(FbmGenerator { grid, hurst, factor: Factor::Circulant { scales, fft } })
    }

    fn cholesky(grid: TimeGrid, hurst: Hurst) -> Result<Self, NoiseError> {
        let n = grid.steps();
        let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(i.abs_diff(j), hurst));
        let chol = cov.cholesky().ok_or(NoiseError::NotPositiveDefinite)?;
        Ok(FbmGenerator { grid, hurst, factor: Factor::Cholesky(chol.l()) })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }

    pub fn method(&self) -> FbmMethod {
        match self.factor {
            Factor::Circulant { .. } => FbmMethod::Circulant,
            Factor::Cholesky(_) => FbmMethod::Cholesky,
        }
    }

    /// One path of fGn increments on the grid (already scaled by `dt^H`).
    pub fn increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.grid.steps();
        let scale = self.grid.dt().powf(self.hurst.value());
        let mut out = match &self.factor {
            Factor::Circulant { scales, fft } => {
                let size = 2 * n;
                let mut w = vec![Complex::new(0.0, 0.0); size];
                w[0] = Complex::new(scales[0] * rng.sample::<f64, _>(StandardNormal), 0.0);
                w[n] = Complex::new(scales[n] * rng.sample::<f64, _>(StandardNormal), 0.0);
                for k in 1..n {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    let v = Complex::new(re, im) * scales[k];
                    w[k] = v;
                    w[size - k] = v.conj();
                }
                fft.process(&mut w);
                w.truncate(n);
                w.into_iter().map(|c| c.re).collect::<Vec<f64>>()
            }
            Factor::Cholesky(lower) => {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (lower * z).iter().copied().collect()
            }
        };
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }

    /// Cumulative sum of [`FbmGenerator::increments`], starting at 0.
    pub fn path_values<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.increments(rng).into_iter().map(|d| {
                acc += d;
                acc
            }))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePath {
        SamplePath::new(self.grid, 1, self.path_values(rng)).expect("finite Gaussian path")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn autocovariance_values() {
        let h = Hurst::new(0.75).unwrap();
        assert_eq!(fgn_autocovariance(0, h), 1.0);
        // (2^1.5 - 2)/2
        assert!((fgn_autocovariance(1, h) - (2f64.powf(1.5) - 2.0) / 2.0).abs() < 1e-15);
        let b = Hurst::new(0.5).unwrap();
        assert!(fgn_autocovariance(3, b).abs() < 1e-15);
    }

    #[test]
    fn circulant_spectrum_is_nonnegative_across_the_range() {
        for h in [0.51, 0.6, 0.75, 0.9, 0.99] {
            for n in [1, 2, 16, 1000, 4096] {
                let grid = TimeGrid::new(1.0, n).unwrap();
                let g = FbmGenerator::new(grid, Hurst::new(h).unwrap(), FbmMethod::Circulant, false);
                assert!(g.is_ok(), "H={h} n={n}");
            }
        }
    }

    #[test]
    fn empirical_increment_variance_matches() {
        // Var of each fGn increment is dt^{2H}; average over positions and paths.
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let h = Hurst::new(0.7).unwrap();
        let g = FbmGenerator::new(grid, h, FbmMethod::Circulant, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sq = Vec::new();
        for _ in 0..2000 {
            sq.extend(g.increments(&mut rng).into_iter().map(|d| d * d));
        }
        let mean = sq.iter().sum::<f64>() / sq.len() as f64;
        let expected = grid.dt().powf(1.4);
        assert!((mean / expected - 1.0).abs() < 0.03, "{mean} vs {expected}");
    }
}
