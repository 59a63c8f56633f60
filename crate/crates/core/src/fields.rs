//! Coefficient systems `(a, b, c)` of the mixed equation
//!
//! ```text
//! dX = a(t, X) dt + b(t, X) dW + c(t, X) dB^H
//! ```
//!
//! stored as expression tables with exact symbolic Jacobians.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::{Expr, ExprError, Node};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{entry}: {source}")]
    Expr {
        entry: String,
        #[source]
        source: ExprError,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{0} references t in an autonomous system")]
    TimeInAutonomous(String),
    #[error("field index out of range: {0:?}")]
    IndexOutOfRange(FieldRef),
    #[error("the system is time dependent; vector fields need autonomous coefficients")]
    NotAutonomous,
}

/// Selects one coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRef {
    Drift,
    /// Column `j` (0-based) of the Wiener coefficient `b`.
    Wiener(usize),
    /// Column `q` (0-based) of the fractional coefficient `c`.
    Fbm(usize),
}

/// A map `R^d -> R^d` (optionally time dependent) with its symbolic Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
    // row-major: jacobian[i * d + r] = d component_i / d x_r
    jacobian: Vec<Expr>,
    jacobian_is_zero: bool,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Result<VectorField, ExprError> {
        let d = components.len();
        let mut jacobian = Vec::with_capacity(d * d);
        for c in &components {
            for r in 1..=d {
                jacobian.push(c.differentiate(r)?);
            }
        }
        let jacobian_is_zero = jacobian.iter().all(Expr::is_zero);
        Ok(VectorField { components, jacobian, jacobian_is_zero })
    }

    pub fn parse(sources: &[&str]) -> Result<VectorField, ExprError> {
        let d = sources.len();
        let comps = sources.iter().map(|s| Expr::parse(s, d)).collect::<Result<Vec<_>, _>>()?;
        VectorField::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn jacobian_exprs(&self) -> &[Expr] {
        &self.jacobian
    }

    pub fn jacobian_is_zero(&self) -> bool {
        self.jacobian_is_zero
    }

    pub fn uses_time(&self) -> bool {
        self.components.iter().any(Expr::uses_time)
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.evaluate_at(t, x)?;
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Row-major `d x d` Jacobian at `(t, x)`.
    pub fn jacobian_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        if self.jacobian_is_zero {
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        for (o, e) in out.iter_mut().zip(&self.jacobian) {
            *o = e.evaluate_at(t, x)?;
        }
        Ok(())
    }

    pub fn jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let d = self.dim();
        let mut buf = vec![0.0; d * d];
        self.jacobian_into(t, x, &mut buf)?;
        Ok(DMatrix::from_row_slice(d, d, &buf))
    }

    /// Symbolic `∂W · V`: the derivative of `self` along `direction`.
    pub fn directional_derivative(&self, direction: &VectorField) -> Vec<Node> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                (0..d).fold(Node::num(0.0), |acc, r| {
                    Node::add(
                        acc,
                        Node::mul(
                            self.jacobian[i * d + r].node().clone(),
                            direction.components[r].node().clone(),
                        ),
                    )
                })
            })
            .collect()
    }
}

/// The triple `(a, b, c)` with `a: d`, `b: d x m`, `c: d x l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSystem {
    name: String,
    dim: usize,
    drift: VectorField,
    wiener: Vec<VectorField>,
    fbm: Vec<VectorField>,
    time_dependent: bool,
    bound: Option<f64>,
}

/// Ordered field list `V_0 = a, V_1..V_m = b columns, V_{m+1}..V_{m+l} = c columns`.
#[derive(Debug, Clone)]
pub struct VectorFieldSet {
    pub fields: Vec<VectorField>,
    pub wiener_dim: usize,
    pub fbm_dim: usize,
}

impl VectorFieldSet {
    pub fn drift(&self) -> &VectorField {
        &self.fields[0]
    }

    /// `V_1 .. V_{m+l}`.
    pub fn diffusion(&self) -> &[VectorField] {
        &self.fields[1..]
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }
}

fn parse_entry(src: &str, dim: usize, entry: String) -> Result<Expr, FieldError> {
    Expr::parse(src, dim).map_err(|source| FieldError::Expr { entry, source })
}

fn columns(
    table: &[Vec<String>],
    dim: usize,
    name: &str,
) -> Result<Vec<Vec<Expr>>, FieldError> {
    if table.is_empty() {
        return Ok(Vec::new());
    }
    if table.len() != dim {
        return Err(FieldError::Shape(format!("{name} has {} rows, expected {dim}", table.len())));
    }
    let width = table.first().map_or(0, Vec::len);
    if table.iter().any(|row| row.len() != width) {
        return Err(FieldError::Shape(format!("{name} rows have unequal lengths")));
    }
    (0..width)
        .map(|j| {
            (0..dim)
                .map(|i| parse_entry(&table[i][j], dim, format!("{name}[{}][{}]", i + 1, j + 1)))
                .collect()
        })
        .collect()
}

impl CoefficientSystem {
    /// Builds a system from expression tables. `wiener` and `fbm` are given
    /// row-wise (`d` rows of `m` resp. `l` entries); an empty table means no
    /// columns.
    pub fn from_tables(
        name: &str,
        drift: &[String],
        wiener: &[Vec<String>],
        fbm: &[Vec<String>],
        time_dependent: bool,
    ) -> Result<CoefficientSystem, FieldError> {
        let dim = drift.len();
        if dim == 0 {
            return Err(FieldError::Shape("state dimension must be positive".into()));
        }
        let drift_exprs = drift
            .iter()
            .enumerate()
            .map(|(i, s)| parse_entry(s, dim, format!("drift[{}]", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let wiener_cols = columns(wiener, dim, "wiener")?;
        let fbm_cols = columns(fbm, dim, "fbm")?;

        if !time_dependent {
            let named = drift_exprs
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("drift[{}]", i + 1), e))
                .chain(wiener_cols.iter().enumerate().flat_map(|(j, col)| {
                    col.iter().enumerate().map(move |(i, e)| (format!("wiener[{}][{}]", i + 1, j + 1), e))
                }))
                .chain(fbm_cols.iter().enumerate().flat_map(|(j, col)| {
                    col.iter().enumerate().map(move |(i, e)| (format!("fbm[{}][{}]", i + 1, j + 1), e))
                }));
            for (entry, e) in named {
                if e.uses_time() {
                    return Err(FieldError::TimeInAutonomous(entry));
                }
            }
        }

        let field = |exprs: Vec<Expr>, what: String| {
            VectorField::new(exprs).map_err(|source| FieldError::Expr { entry: what, source })
        };
        Ok(CoefficientSystem {
            name: name.to_string(),
            dim,
            drift: field(drift_exprs, "drift".into())?,
            wiener: wiener_cols
                .into_iter()
                .enumerate()
                .map(|(j, c)| field(c, format!("wiener column {}", j + 1)))
                .collect::<Result<_, _>>()?,
            fbm: fbm_cols
                .into_iter()
                .enumerate()
                .map(|(j, c)| field(c, format!("fbm column {}", j + 1)))
                .collect::<Result<_, _>>()?,
            time_dependent,
            bound: None,
        })
    }

    /// Convenience wrapper over [`CoefficientSystem::from_tables`] for string slices.
    pub fn autonomous(
        name: &str,
        drift: &[&str],
        wiener: &[&[&str]],
        fbm: &[&[&str]],
    ) -> Result<CoefficientSystem, FieldError> {
        let own = |rows: &[&[&str]]| -> Vec<Vec<String>> {
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
        };
        let drift: Vec<String> = drift.iter().map(|s| s.to_string()).collect();
        CoefficientSystem::from_tables(name, &drift, &own(wiener), &own(fbm), false)
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener.len()
    }

    pub fn fbm_dim(&self) -> usize {
        self.fbm.len()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// Declared bound on field and Jacobian norms (bounded presets only).
    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn field(&self, which: FieldRef) -> Result<&VectorField, FieldError> {
        match which {
            FieldRef::Drift => Ok(&self.drift),
            FieldRef::Wiener(j) => self.wiener.get(j).ok_or(FieldError::IndexOutOfRange(which)),
            FieldRef::Fbm(q) => self.fbm.get(q).ok_or(FieldError::IndexOutOfRange(which)),
        }
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    pub fn wiener_columns(&self) -> &[VectorField] {
        &self.wiener
    }

    pub fn fbm_columns(&self) -> &[VectorField] {
        &self.fbm
    }

    pub fn eval_field(&self, which: FieldRef, t: f64, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        self.field(which)?.eval(t, x).map_err(|source| FieldError::Expr {
            entry: format!("{which:?}"),
            source,
        })
    }

    pub fn jacobian(&self, which: FieldRef, t: f64, x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        self.field(which)?.jacobian(t, x).map_err(|source| FieldError::Expr {
            entry: format!("{which:?}"),
            source,
        })
    }

    pub fn vector_fields(&self) -> Result<VectorFieldSet, FieldError> {
        if self.time_dependent {
            return Err(FieldError::NotAutonomous);
        }
        let mut fields = vec![self.drift.clone()];
        fields.extend(self.wiener.iter().cloned());
        fields.extend(self.fbm.iter().cloned());
        Ok(VectorFieldSet { fields, wiener_dim: self.wiener.len(), fbm_dim: self.fbm.len() })
    }

    /// Every field of the system in `V_0, V_1, ..` order, time dependent or not.
    pub fn all_fields(&self) -> impl Iterator<Item = &VectorField> {
        std::iter::once(&self.drift).chain(&self.wiener).chain(&self.fbm)
    }
}

/// Numeric knobs of the built-in presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetParams {
    /// Wiener scale (`additive`, `geometric`).
    pub sigma: f64,
    /// Fractional scale (`additive`, `geometric`).
    pub gamma: f64,
    /// Linear drift rate (`geometric`).
    pub mu: f64,
    /// State dimension (`additive`).
    pub dim: usize,
}

impl Default for PresetParams {
    fn default() -> Self {
        PresetParams { sigma: 1.0, gamma: 1.0, mu: 0.0, dim: 1 }
    }
}

pub const PRESET_NAMES: [&str; 5] = ["additive", "geometric", "heisenberg", "degenerate", "bounded-smooth"];

fn lit(v: f64) -> String {
    format!("{v:?}")
}

/// Built-in systems.
///
/// * `additive`: `a = 0`, `b = sigma I_d`, `c = gamma I_d`.
/// * `geometric`: `d = 1`, `a = mu x1`, `b = sigma x1`, `c = gamma x1`.
/// * `heisenberg`: `d = 2`, `a = 0`, `V_1 = b = (1, 0)`, `V_2 = c = (0, x1)`.
/// * `degenerate`: `d = 2`, every field is a multiple of `(1, 0)`.
/// * `bounded-smooth`: `d = 2`, `m = l = 1`, sin/tanh fields with every
///   field and Jacobian norm below 2.
pub fn preset(name: &str, params: &PresetParams) -> Result<CoefficientSystem, FieldError> {
    match name {
        "additive" => {
            let d = params.dim.max(1);
            let diag = |scale: f64| -> Vec<Vec<String>> {
                (0..d)
                    .map(|i| (0..d).map(|j| if i == j { lit(scale) } else { "0".into() }).collect())
                    .collect()
            };
            CoefficientSystem::from_tables(name, &vec!["0".to_string(); d], &diag(params.sigma), &diag(params.gamma), false)
        }
        "geometric" => CoefficientSystem::from_tables(
            name,
            &[format!("{} * x1", lit(params.mu))],
            &[vec![format!("{} * x1", lit(params.sigma))]],
            &[vec![format!("{} * x1", lit(params.gamma))]],
            false,
        ),
        "heisenberg" => CoefficientSystem::autonomous(name, &["0", "0"], &[&["1"], &["0"]], &[&["0"], &["x1"]]),
        "degenerate" => CoefficientSystem::autonomous(
            name,
            &["0", "0"],
            &[&["1"], &["0"]],
            &[&["1 + 0.5 * sin(x1)"], &["0"]],
        ),
        "bounded-smooth" => Ok(CoefficientSystem::autonomous(
            name,
            &["0.5 * sin(x2)", "-0.5 * tanh(x1)"],
            &[&["1 + 0.3 * tanh(x2)"], &["0.2 * cos(x1)"]],
            &[&["0.2 * sin(x2)"], &["1 + 0.3 * tanh(x1)"]],
        )?
        .with_bound(2.0)),
        other => Err(FieldError::UnknownPreset(other.to_string())),
    }
}

/// Advisory numeric check of the growth and boundedness assumptions.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub points: usize,
    /// max over points and fields of the Euclidean field norm
    pub max_field_norm: f64,
    /// max over points and fields of the Frobenius Jacobian norm
    pub max_jacobian_norm: f64,
    /// smallest C with |a| + |b| + |c| <= C (1 + |x|) on the sample
    pub growth_constant: f64,
    pub warnings: Vec<String>,
}

/// `count` points uniform in `[-radius, radius]^dim`.
pub fn random_points(dim: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(-radius..=radius)).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check_assumptions(sys: &CoefficientSystem, points: &[Vec<f64>], t: f64) -> Result<AssumptionReport, FieldError> {
    let d = sys.dim();
    let mut max_field: f64 = 0.0;
    let mut max_jac: f64 = 0.0;
    let mut growth: f64 = 0.0;
    let mut jac = vec![0.0; d * d];
    for x in points {
        let xn = norm(x);
        let a = sys.eval_field(FieldRef::Drift, t, x)?;
        let mut total = norm(&a);
        max_field = max_field.max(norm(&a));
        let (mut b_sq, mut c_sq) = (0.0, 0.0);
        for (j, f) in sys.all_fields().enumerate() {
            let v = f.eval(t, x).map_err(|source| FieldError::Expr { entry: format!("field {j}"), source })?;
            max_field = max_field.max(norm(&v));
            f.jacobian_into(t, x, &mut jac)
                .map_err(|source| FieldError::Expr { entry: format!("field {j} jacobian"), source })?;
            max_jac = max_jac.max(norm(&jac));
            let sq: f64 = v.iter().map(|z| z * z).sum();
            if (1..=sys.wiener_dim()).contains(&j) {
                b_sq += sq;
            } else if j > sys.wiener_dim() {
                c_sq += sq;
            }
        }
        total += f64::sqrt(b_sq) + f64::sqrt(c_sq);
        growth = growth.max(total / (1.0 + xn));
    }
    let mut warnings = Vec::new();
    if let Some(bound) = sys.bound() {
        if max_field > bound || max_jac > bound {
            warnings.push(format!(
                "declared bound {bound} exceeded: field norm {max_field}, jacobian norm {max_jac}"
            ));
        }
    }
    Ok(AssumptionReport {
        points: points.len(),
        max_field_norm: max_field,
        max_jacobian_norm: max_jac,
        growth_constant: growth,
        warnings,
    })
}

/// Largest `|c(t,x) - c(s,x)| / (|t-s|^beta (1 + |x|))` over grid neighbours
/// and the supplied points; a numeric spot-check of time regularity.
pub fn time_holder_ratio(
    sys: &CoefficientSystem,
    points: &[Vec<f64>],
    times: &[f64],
    beta: f64,
) -> Result<f64, FieldError> {
    let mut worst: f64 = 0.0;
    for x in points {
        for w in times.windows(2) {
            for q in 0..sys.fbm_dim() {
                let c1 = sys.eval_field(FieldRef::Fbm(q), w[0], x)?;
                let c2 = sys.eval_field(FieldRef::Fbm(q), w[1], x)?;
                let diff: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a - b).collect();
                worst = worst.max(norm(&diff) / ((w[1] - w[0]).abs().powf(beta) * (1.0 + norm(x))));
            }
        }
    }
    Ok(worst)
}
