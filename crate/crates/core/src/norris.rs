//! Two-scale partition statistics and the Norris-type event
//! `{‖Y‖_∞ < ε, ‖b‖_∞ + ‖c‖_∞ > ε^q}` for mixed processes on `[0, 1]`.
//!
//! With `Δ = 1/M`, `δ = Δ/r` and `t_n = nδ`,
//!
//! ```text
//! V_N(ξ, ζ) = Σ_{n=Nr}^{(N+1)r-1} (ξ_{t_{n+1}} - ξ_{t_n}) (ζ_{t_{n+1}} - ζ_{t_n})
//! R^W     = Δ^{3/4} δ^{-1/4}    Σ_N Σ_{u,v} | Δ^{1/2} δ_{uv} - |V_N(W^u, W^v)|^{1/2} |
//! R^B     = Δ^{H-3/2} δ^{1/2}   Σ_N Σ_{u,v} | Δ^{1/2} δ^{H-1/2} δ_{uv} - |V_N(B^u, B^v)|^{1/2} |
//! R^{W,B} = Δ^{3/4} δ^{-H/2}    Σ_N Σ_{u,v} |V_N(W^u, B^v)|^{1/2}
//! ```

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{CoefficientSystem, FieldRef};
use crate::noise::{Hurst, NoiseError, NoiseSource};
use crate::paths::{PathError, SamplePath, TimeGrid};
use crate::sde::{solve_mixed_euler, SdeError, SolveConfig};
use crate::stats;

#[derive(Debug, Error)]
pub enum NorrisError {
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("block {block} out of range (M = {blocks})")]
    Block { block: usize, blocks: usize },
    #[error("path grid ({steps} steps on [0, {horizon}]) does not refine the partition")]
    Grid { steps: usize, horizon: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("concentration tail needs at least 100 samples, got {0}")]
    TooFewSamples(usize),
    #[error("all samples are equal")]
    Degenerate,
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<NorrisError>,
    },
}

/// `M` blocks of `r` fine steps covering `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NorrisPartition {
    pub blocks: usize,
    pub steps_per_block: usize,
}

impl NorrisPartition {
    pub fn new(blocks: usize, steps_per_block: usize) -> Result<Self, NorrisError> {
        if blocks == 0 || steps_per_block == 0 {
            return Err(NorrisError::Partition("M and r must be positive".into()));
        }
        Ok(NorrisPartition { blocks, steps_per_block })
    }

    /// `Δ = 1/M`.
    pub fn coarse(&self) -> f64 {
        1.0 / self.blocks as f64
    }

    /// `δ = Δ/r`.
    pub fn fine(&self) -> f64 {
        self.coarse() / self.steps_per_block as f64
    }

    pub fn fine_steps(&self) -> usize {
        self.blocks * self.steps_per_block
    }

    /// Simulation grid `n = M r s` on `[0, 1]`.
    pub fn grid(&self, oversample: usize) -> Result<TimeGrid, NorrisError> {
        if oversample == 0 {
            return Err(NorrisError::Partition("oversampling factor must be positive".into()));
        }
        Ok(TimeGrid::new(1.0, self.fine_steps() * oversample)?)
    }

    /// Index stride of `t_n` in a path grid refining the partition.
    pub fn stride(&self, grid: &TimeGrid) -> Result<usize, NorrisError> {
        let bad = || NorrisError::Grid { steps: grid.steps(), horizon: grid.horizon() };
        if (grid.horizon() - 1.0).abs() > 1e-12 || !grid.steps().is_multiple_of(self.fine_steps()) {
            return Err(bad());
        }
        Ok(grid.steps() / self.fine_steps())
    }
}

fn block_sum(xi: &[f64], zeta: &[f64], start: usize, r: usize, stride: usize) -> f64 {
    (start..start + r)
        .map(|n| {
            let (a, b) = (n * stride, (n + 1) * stride);
            (xi[b] - xi[a]) * (zeta[b] - zeta[a])
        })
        .sum()
}

/// `V_N(ξ, ζ)` for scalar paths.
pub fn quadratic_covariation(
    xi: &SamplePath,
    zeta: &SamplePath,
    block: usize,
    part: &NorrisPartition,
) -> Result<f64, NorrisError> {
    if xi.grid() != zeta.grid() {
        return Err(PathError::GridMismatch.into());
    }
    if xi.dim() != 1 || zeta.dim() != 1 {
        return Err(NorrisError::Dimension("V_N takes scalar paths".into()));
    }
    if block >= part.blocks {
        return Err(NorrisError::Block { block, blocks: part.blocks });
    }
    let stride = part.stride(xi.grid())?;
    let r = part.steps_per_block;
    Ok(block_sum(xi.values(), zeta.values(), block * r, r, stride))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RStatistics {
    pub rw: f64,
    pub rb: f64,
    pub rwb: f64,
}

/// `R^W`, `R^B`, `R^{W,B}` from Wiener paths `w` (m components) and fBm paths
/// `b` (l components) on a grid refining the partition.
pub fn r_statistics(w: &SamplePath, b: &SamplePath, part: &NorrisPartition, hurst: Hurst) -> Result<RStatistics, NorrisError> {
    if w.grid() != b.grid() {
        return Err(PathError::GridMismatch.into());
    }
    let stride = part.stride(w.grid())?;
    let h = hurst.value();
    let (big, small) = (part.coarse(), part.fine());
    let r = part.steps_per_block;
    let wc: Vec<Vec<f64>> = (0..w.dim()).map(|u| w.component(u)).collect();
    let bc: Vec<Vec<f64>> = (0..b.dim()).map(|u| b.component(u)).collect();
    let kron = |u: usize, v: usize| if u == v { 1.0 } else { 0.0 };
    let (mut sw, mut sb, mut swb) = (0.0, 0.0, 0.0);
    for n in 0..part.blocks {
        let start = n * r;
        for u in 0..wc.len() {
            for v in 0..wc.len() {
                let vn = block_sum(&wc[u], &wc[v], start, r, stride);
                sw += (big.sqrt() * kron(u, v) - vn.abs().sqrt()).abs();
            }
            for v in 0..bc.len() {
                swb += block_sum(&wc[u], &bc[v], start, r, stride).abs().sqrt();
            }
        }
        for u in 0..bc.len() {
            for v in 0..bc.len() {
                let vn = block_sum(&bc[u], &bc[v], start, r, stride);
                sb += (big.sqrt() * small.powf(h - 0.5) * kron(u, v) - vn.abs().sqrt()).abs();
            }
        }
    }
    Ok(RStatistics {
        rw: big.powf(0.75) * small.powf(-0.25) * sw,
        rb: big.powf(h - 1.5) * small.sqrt() * sb,
        rwb: big.powf(0.75) * small.powf(-h / 2.0) * swb,
    })
}

/// Empirical tail `h ↦ frequency{sample >= h}` with a least-squares fit of
/// `log frequency` against `h²` over bins with at least 10 exceedances.
#[derive(Debug, Clone, Serialize)]
pub struct TailFit {
    pub h: Vec<f64>,
    pub frequency: Vec<f64>,
    pub exceedances: Vec<usize>,
    /// Slope of `log frequency` in `h²`; the tail decays like `exp(slope h²)`.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub bins_used: usize,
}

pub const MIN_EXCEEDANCES: usize = 10;

pub fn concentration_tail(samples: &[f64], h_grid: &[f64]) -> Result<TailFit, NorrisError> {
    if samples.len() < 100 {
        return Err(NorrisError::TooFewSamples(samples.len()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(NorrisError::Degenerate);
    }
    let n = sorted.len();
    let exceedances: Vec<usize> = h_grid.iter().map(|&h| n - sorted.partition_point(|v| *v < h)).collect();
    let frequency: Vec<f64> = exceedances.iter().map(|&e| e as f64 / n as f64).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = h_grid
        .iter()
        .zip(&exceedances)
        .filter(|(_, e)| **e >= MIN_EXCEEDANCES)
        .map(|(h, e)| (h * h, (*e as f64 / n as f64).ln()))
        .unzip();
    let fit = stats::linear_fit(&xs, &ys);
    Ok(TailFit {
        h: h_grid.to_vec(),
        frequency,
        exceedances,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        bins_used: xs.len(),
    })
}

/// `points` equally spaced values from 0 to the sample maximum.
pub fn default_h_grid(samples: &[f64], points: usize) -> Vec<f64> {
    let max = samples.iter().copied().fold(0.0, f64::max);
    let points = points.max(2);
    (0..points).map(|i| max * i as f64 / (points - 1) as f64).collect()
}

/// `θ_* = (H - 1/2) / (3 - 4H)`.
pub fn theta_star(hurst: f64) -> f64 {
    (hurst - 0.5) / (3.0 - 4.0 * hurst)
}

/// Advisory checks of the parameter window `H ∈ (1/2, 2/3)`, `θ ∈ (θ_*, 1/2)`.
pub fn window_warnings(hurst: f64, theta: f64) -> Vec<String> {
    let mut out = Vec::new();
    if !(hurst > 0.5 && hurst < 2.0 / 3.0) {
        out.push(format!("H = {hurst} lies outside (1/2, 2/3)"));
    }
    let ts = theta_star(hurst);
    if !(theta > ts && theta < 0.5) || ts.is_nan() || hurst >= 0.75 {
        out.push(format!("theta = {theta} lies outside (theta_* = {ts}, 1/2)"));
    }
    out
}

/// A Norris experiment: `Y` solves the mixed equation of `sys` from `y0` on
/// `[0, 1]`; the integrands are `b(t, Y_t)` and `c(t, Y_t)`.
#[derive(Debug, Clone)]
pub struct NorrisSetup {
    pub sys: CoefficientSystem,
    pub y0: Vec<f64>,
    pub hurst: Hurst,
    pub partition: NorrisPartition,
    pub oversample: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub sup_y: f64,
    pub sup_b: f64,
    pub sup_c: f64,
    pub rw: f64,
    pub rb: f64,
    pub rwb: f64,
}

impl TrialRecord {
    pub fn event(&self, eps: f64, q: f64) -> bool {
        self.sup_y < eps && self.sup_b + self.sup_c > eps.powf(q)
    }
}

/// Matrix-column sup norm `max_t (Σ_j |σ_j(t, Y_t)|²)^{1/2}` over the grid.
fn sup_coefficient(sys: &CoefficientSystem, y: &SamplePath, which: impl Fn(usize) -> FieldRef, count: usize) -> Result<f64, NorrisError> {
    let mut best: f64 = 0.0;
    for k in 0..y.len() {
        let t = y.grid().time(k);
        let mut sq = 0.0;
        for j in 0..count {
            let v = sys.eval_field(which(j), t, y.at(k)).map_err(SdeError::from)?;
            sq += v.iter().map(|x| x * x).sum::<f64>();
        }
        best = best.max(sq.sqrt());
    }
    Ok(best)
}

impl NorrisSetup {
    pub fn grid(&self) -> Result<TimeGrid, NorrisError> {
        self.partition.grid(self.oversample)
    }

    pub fn source(&self) -> Result<NoiseSource, NorrisError> {
        Ok(NoiseSource::new(self.grid()?, self.hurst, self.sys.wiener_dim(), self.sys.fbm_dim(), self.seed)?)
    }

    pub fn trial(&self, source: &NoiseSource, trial: u64) -> Result<TrialRecord, NorrisError> {
        let noise = source.bundle(trial);
        let y = solve_mixed_euler(&SolveConfig::new(&self.sys, &self.y0, &noise)?)?;
        let r = r_statistics(&noise.wiener, &noise.fbm, &self.partition, self.hurst)?;
        Ok(TrialRecord {
            trial,
            sup_y: y.sup_norm(),
            sup_b: sup_coefficient(&self.sys, &y, FieldRef::Wiener, self.sys.wiener_dim())?,
            sup_c: sup_coefficient(&self.sys, &y, FieldRef::Fbm, self.sys.fbm_dim())?,
            rw: r.rw,
            rb: r.rb,
            rwb: r.rwb,
        })
    }

    pub fn trials(&self, count: usize) -> Result<Vec<TrialRecord>, NorrisError> {
        let source = self.source()?;
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.trial(&source, i).map_err(|e| NorrisError::Trial { trial: i, source: Box::new(e) }))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EventFrequency {
    pub eps: f64,
    pub q: f64,
    pub frequency: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NorrisReport {
    pub trials: usize,
    pub frequencies: Vec<EventFrequency>,
    pub tail_rw: Option<TailFit>,
    pub tail_rb: Option<TailFit>,
    pub tail_rwb: Option<TailFit>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

pub fn event_frequency(records: &[TrialRecord], eps: f64, q: f64) -> EventFrequency {
    let n = records.len() as f64;
    let p = records.iter().filter(|r| r.event(eps, q)).count() as f64 / n;
    EventFrequency { eps, q, frequency: p, standard_error: (p * (1.0 - p) / n).sqrt() }
}

/// Runs `count` trials and tabulates the event frequency on the `(ε, q)` grid
/// plus tail fits of the three `R` statistics.
pub fn norris_experiment(
    setup: &NorrisSetup,
    epsilons: &[f64],
    qs: &[f64],
    count: usize,
    theta: f64,
    tail_points: usize,
) -> Result<NorrisReport, NorrisError> {
    let records = setup.trials(count)?;
    let frequencies = qs
        .iter()
        .flat_map(|&q| epsilons.iter().map(move |&e| (e, q)))
        .map(|(e, q)| event_frequency(&records, e, q))
        .collect();
    let tail = |f: fn(&TrialRecord) -> f64| {
        let xs: Vec<f64> = records.iter().map(f).collect();
        concentration_tail(&xs, &default_h_grid(&xs, tail_points)).ok()
    };
    Ok(NorrisReport {
        trials: records.len(),
        frequencies,
        tail_rw: tail(|r| r.rw),
        tail_rb: tail(|r| r.rb),
        tail_rwb: tail(|r| r.rwb),
        warnings: window_warnings(setup.hurst.value(), theta),
        records,
    })
}

impl NorrisReport {
    /// CSV `trial,seed,sup_y,sup_b,sup_c,event,rw,rb,rwb`; the event column
    /// uses the first `(ε, q)` pair.
    pub fn write_csv<W: Write>(&self, out: W, seed: u64, metadata: &[(&str, String)]) -> Result<(), PathError> {
        let mut out = out;
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let first = self.frequencies.first().map(|f| (f.eps, f.q));
        if let Some((e, q)) = first {
            writeln!(out, "# event_eps={e:?}")?;
            writeln!(out, "# event_q={q:?}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "seed", "sup_y", "sup_b", "sup_c", "event", "rw", "rb", "rwb"])?;
        for r in &self.records {
            let event = first.is_some_and(|(e, q)| r.event(e, q));
            w.write_record([
                r.trial.to_string(),
                seed.to_string(),
                format!("{:?}", r.sup_y),
                format!("{:?}", r.sup_b),
                format!("{:?}", r.sup_c),
                u8::from(event).to_string(),
                format!("{:?}", r.rw),
                format!("{:?}", r.rb),
                format!("{:?}", r.rwb),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
