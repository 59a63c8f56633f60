//! Run configuration: TOML with one section per concern.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fields::{preset, CoefficientSystem, FieldError, PresetParams, PRESET_NAMES};
use crate::hormander::{DEFAULT_NODE_CAP, DEFAULT_TOLERANCE};
use crate::malliavin::default_epsilon_grid;
use crate::noise::Hurst;
use crate::paths::TimeGrid;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot parse configuration: {0}")]
    Syntax(String),
}

impl ConfigError {
    fn at(field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { field: field.to_string(), message: message.into() }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malliavin: Option<MalliavinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hormander: Option<HormanderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norris: Option<NorrisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
}

/// Either `preset` (plus its numeric knobs) or the inline tables
/// `drift`, `wiener`, `fbm`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    /// `d` rows of `m` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wiener: Option<Vec<Vec<String>>>,
    /// `d` rows of `l` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbm: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub time_dependent: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Worker pool size; 0 lets the pool pick.
    #[serde(default)]
    pub threads: usize,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_sim_paths")]
    pub paths: usize,
    /// Full trajectories written for the first this many paths.
    #[serde(default = "default_write_paths")]
    pub write_paths: usize,
}

fn default_sim_paths() -> usize {
    1
}

fn default_write_paths() -> usize {
    1
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { paths: default_sim_paths(), write_paths: default_write_paths() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinConfig {
    #[serde(default = "default_malliavin_paths")]
    pub paths: usize,
    #[serde(default = "default_epsilon_grid")]
    pub epsilons: Vec<f64>,
}

fn default_malliavin_paths() -> usize {
    100
}

impl Default for MalliavinConfig {
    fn default() -> Self {
        MalliavinConfig { paths: default_malliavin_paths(), epsilons: default_epsilon_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HormanderConfig {
    #[serde(default = "default_n0")]
    pub n0: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub include_drift: bool,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
    #[serde(default)]
    pub t0: f64,
}

fn default_n0() -> usize {
    3
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_node_cap() -> usize {
    DEFAULT_NODE_CAP
}

impl Default for HormanderConfig {
    fn default() -> Self {
        HormanderConfig {
            n0: default_n0(),
            tolerance: default_tolerance(),
            include_drift: false,
            node_cap: default_node_cap(),
            t0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorrisConfig {
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_blocks")]
    pub steps_per_block: usize,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_norris_eps")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_norris_q")]
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default = "default_tail_points")]
    pub tail_points: usize,
}

fn default_blocks() -> usize {
    16
}

fn default_oversample() -> usize {
    4
}

fn default_trials() -> usize {
    1000
}

fn default_norris_eps() -> Vec<f64> {
    vec![0.5, 0.4, 0.3]
}

fn default_norris_q() -> Vec<f64> {
    vec![0.5]
}

fn default_tail_points() -> usize {
    40
}

impl Default for NorrisConfig {
    fn default() -> Self {
        NorrisConfig {
            blocks: default_blocks(),
            steps_per_block: default_blocks(),
            oversample: default_oversample(),
            trials: default_trials(),
            epsilons: default_norris_eps(),
            q: default_norris_q(),
            theta: None,
            tail_points: default_tail_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default = "default_density_paths")]
    pub paths: usize,
    /// Defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_cov: Option<Vec<Vec<f64>>>,
    /// Defaults to `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_center: Option<Vec<f64>>,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrability: Option<IntegrabilityConfig>,
}

fn default_density_paths() -> usize {
    1000
}

fn default_radii() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            paths: default_density_paths(),
            t: None,
            bandwidth: None,
            gaussian_mean: None,
            gaussian_cov: None,
            ball_center: None,
            radii: default_radii(),
            integrability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrabilityConfig {
    pub theta: f64,
    #[serde(default = "default_k")]
    pub k: Vec<f64>,
    pub q: Vec<f64>,
    /// Estimates use `paths` and `2 * paths` trajectories.
    #[serde(default = "default_density_paths")]
    pub paths: usize,
}

fn default_k() -> Vec<f64> {
    vec![1.0]
}

/// A configuration that passed validation, with its parsed pieces.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: RunConfig,
    pub system: CoefficientSystem,
    pub hurst: Hurst,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configuration always serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn build_system(&self) -> Result<CoefficientSystem, ConfigError> {
        let s = &self.system;
        let inline = s.drift.is_some() || s.wiener.is_some() || s.fbm.is_some();
        match (&s.preset, inline) {
            (Some(_), true) => Err(ConfigError::at("system", "give either `preset` or inline tables, not both")),
            (None, false) => Err(ConfigError::at("system.preset", "missing; give a preset name or inline tables")),
            (Some(name), false) => {
                if !PRESET_NAMES.contains(&name.as_str()) {
                    return Err(ConfigError::at(
                        "system.preset",
                        format!("unknown preset `{name}`; known: {}", PRESET_NAMES.join(", ")),
                    ));
                }
                let d = PresetParams::default();
                let params = PresetParams {
                    sigma: s.sigma.unwrap_or(d.sigma),
                    gamma: s.gamma.unwrap_or(d.gamma),
                    mu: s.mu.unwrap_or(d.mu),
                    dim: s.dim.unwrap_or(d.dim),
                };
                if params.dim == 0 {
                    return Err(ConfigError::at("system.dim", "must be positive"));
                }
                preset(name, &params).map_err(|e| ConfigError::at("system", e.to_string()))
            }
            (None, true) => {
                for (key, set) in [("sigma", s.sigma.is_some()), ("gamma", s.gamma.is_some()), ("mu", s.mu.is_some())] {
                    if set {
                        return Err(ConfigError::at(&format!("system.{key}"), "only meaningful with a preset"));
                    }
                }
                let drift = s.drift.clone().ok_or_else(|| ConfigError::at("system.drift", "missing"))?;
                if let Some(d) = s.dim {
                    if d != drift.len() {
                        return Err(ConfigError::at("system.dim", format!("{d} but drift has {} entries", drift.len())));
                    }
                }
                let name = s.name.clone().unwrap_or_else(|| "inline".into());
                CoefficientSystem::from_tables(
                    &name,
                    &drift,
                    s.wiener.as_deref().unwrap_or(&[]),
                    s.fbm.as_deref().unwrap_or(&[]),
                    s.time_dependent,
                )
                .map_err(|e| ConfigError::at(&field_of(&e), e.to_string()))
            }
        }
    }

    pub fn validate(&self) -> Result<Validated, ConfigError> {
        let system = self.build_system()?;
        let r = &self.run;
        let h = r.hurst.ok_or_else(|| ConfigError::at("run.hurst", "missing"))?;
        if !(h > 0.5 && h < 1.0) {
            return Err(ConfigError::at("run.hurst", format!("must lie strictly between 1/2 and 1, got {h}")));
        }
        let hurst = Hurst::new(h).map_err(|e| ConfigError::at("run.hurst", e.to_string()))?;
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            return Err(ConfigError::at("run.horizon", format!("must be positive, got {}", r.horizon)));
        }
        let steps = r.steps.ok_or_else(|| ConfigError::at("run.steps", "missing"))?;
        if steps < 2 || !steps.is_power_of_two() {
            return Err(ConfigError::at("run.steps", format!("must be a power of two >= 2, got {steps}")));
        }
        let grid = TimeGrid::new(r.horizon, steps).map_err(|e| ConfigError::at("run.steps", e.to_string()))?;
        let x0 = r.x0.clone().ok_or_else(|| ConfigError::at("run.x0", "missing"))?;
        if x0.len() != system.dim() {
            return Err(ConfigError::at("run.x0", format!("has {} entries, system dimension is {}", x0.len(), system.dim())));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::at("run.x0", "entries must be finite"));
        }

        if let Some(s) = &self.simulate {
            if s.paths == 0 {
                return Err(ConfigError::at("simulate.paths", "must be positive"));
            }
        }
        if let Some(m) = &self.malliavin {
            if m.paths < 100 {
                return Err(ConfigError::at("malliavin.paths", format!("must be at least 100, got {}", m.paths)));
            }
            positive_list("malliavin.epsilons", &m.epsilons)?;
        }
        if let Some(hc) = &self.hormander {
            if hc.n0 == 0 {
                return Err(ConfigError::at("hormander.n0", "must be at least 1"));
            }
            if !(hc.tolerance > 0.0) {
                return Err(ConfigError::at("hormander.tolerance", "must be positive"));
            }
            if hc.node_cap == 0 {
                return Err(ConfigError::at("hormander.node_cap", "must be positive"));
            }
        }
        if let Some(n) = &self.norris {
            for (key, v) in [("blocks", n.blocks), ("steps_per_block", n.steps_per_block), ("oversample", n.oversample)] {
                if v == 0 {
                    return Err(ConfigError::at(&format!("norris.{key}"), "must be positive"));
                }
            }
            if n.trials < 2 {
                return Err(ConfigError::at("norris.trials", "must be at least 2"));
            }
            positive_list("norris.epsilons", &n.epsilons)?;
            positive_list("norris.q", &n.q)?;
            if let Some(t) = n.theta {
                if !(t > 0.0 && t < 1.0) {
                    return Err(ConfigError::at("norris.theta", format!("must lie in (0, 1), got {t}")));
                }
            }
        }
        if let Some(dc) = &self.density {
            if dc.paths < 100 {
                return Err(ConfigError::at("density.paths", format!("must be at least 100, got {}", dc.paths)));
            }
            if let Some(t) = dc.t {
                if grid.index_of(t).is_none() {
                    return Err(ConfigError::at("density.t", format!("{t} is not a grid point")));
                }
            }
            if let Some(b) = dc.bandwidth {
                if !(b > 0.0) {
                    return Err(ConfigError::at("density.bandwidth", "must be positive"));
                }
            }
            let d = system.dim();
            match (&dc.gaussian_mean, &dc.gaussian_cov) {
                (Some(m), Some(c)) => {
                    if m.len() != d {
                        return Err(ConfigError::at("density.gaussian_mean", format!("needs {d} entries")));
                    }
                    if c.len() != d || c.iter().any(|row| row.len() != d) {
                        return Err(ConfigError::at("density.gaussian_cov", format!("needs {d} rows of {d}")));
                    }
                }
                (None, None) => {}
                (Some(_), None) => return Err(ConfigError::at("density.gaussian_cov", "missing")),
                (None, Some(_)) => return Err(ConfigError::at("density.gaussian_mean", "missing")),
            }
            if let Some(c) = &dc.ball_center {
                if c.len() != d {
                    return Err(ConfigError::at("density.ball_center", format!("needs {d} entries")));
                }
            }
            if dc.radii.iter().any(|r| !(*r > 0.0)) || dc.radii.windows(2).any(|w| w[1] >= w[0]) {
                return Err(ConfigError::at("density.radii", "must be positive and strictly decreasing"));
            }
            if let Some(ic) = &dc.integrability {
                if !(ic.theta > 0.0 && ic.theta < 0.5) {
                    return Err(ConfigError::at("density.integrability.theta", "must lie in (0, 1/2)"));
                }
                if ic.paths == 0 {
                    return Err(ConfigError::at("density.integrability.paths", "must be positive"));
                }
                positive_list("density.integrability.q", &ic.q)?;
                if ic.k.iter().any(|k| !(*k >= 0.0)) {
                    return Err(ConfigError::at("density.integrability.k", "entries must be nonnegative"));
                }
            }
        }
        Ok(Validated { config: self.clone(), system, hurst, grid, x0 })
    }
}

fn positive_list(field: &str, xs: &[f64]) -> Result<(), ConfigError> {
    if xs.is_empty() {
        return Err(ConfigError::at(field, "must not be empty"));
    }
    if xs.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(ConfigError::at(field, "entries must be positive"));
    }
    Ok(())
}

fn field_of(e: &FieldError) -> String {
    match e {
        FieldError::Expr { entry, .. } | FieldError::TimeInAutonomous(entry) => {
            let head = entry.split(['[', ' ']).next().unwrap_or("");
            format!("system.{head}")
        }
        _ => "system".into(),
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
