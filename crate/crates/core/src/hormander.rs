//! Lie brackets of coefficient fields and bracket-rank conditions.
//!
//! Convention: `[V, W] = ∂W·V - ∂V·W`.
//!
//! Level 1 of the hierarchy is the diffusion set `V_1..V_{m+l}`; level `k`
//! brackets every base field with every level `k-1` node, giving words
//! `(i_1, .., i_k)` over base-field indices. The drift `V_0` joins the base
//! set for levels `k >= 2` when `include_drift` is set.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::exprlang::{Expr, ExprError};
use crate::fields::{CoefficientSystem, FieldError, FieldRef, VectorField, VectorFieldSet};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_NODE_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum HormanderError {
    #[error("fields have dimensions {0} and {1}")]
    Dimension(usize, usize),
    #[error("bracket hierarchy needs {needed} nodes at level {level}, cap is {cap}")]
    Budget { level: usize, needed: usize, cap: usize },
    #[error("maximum level must be at least 1")]
    InvalidLevel,
    #[error("point has {got} coordinates, fields live in dimension {dim}")]
    Point { dim: usize, got: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Symbolic `[V, W] = ∂W·V - ∂V·W`.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, HormanderError> {
    if v.dim() != w.dim() {
        return Err(HormanderError::Dimension(v.dim(), w.dim()));
    }
    let d = v.dim();
    let dw_v = w.directional_derivative(v);
    let dv_w = v.directional_derivative(w);
    let comps = dw_v
        .into_iter()
        .zip(dv_w)
        .map(|(a, b)| Expr::from_node(crate::exprlang::Node::sub(a, b), d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VectorField::new(comps)?)
}

/// One element of the bracket hierarchy.
#[derive(Debug, Clone)]
pub struct BracketNode {
    pub field: VectorField,
    /// Base-field indices, outermost first: `(i_1, .., i_k)` is
    /// `[V_{i_1}, [V_{i_2}, .. V_{i_k}]..]`.
    pub word: Vec<usize>,
    pub level: usize,
    pub value_at_x0: Vec<f64>,
}

impl BracketNode {
    pub fn word_label(&self) -> String {
        let names: Vec<String> = self.word.iter().map(|i| format!("V{i}")).collect();
        if names.len() == 1 {
            return names[0].clone();
        }
        let mut out = names.last().cloned().unwrap_or_default();
        for n in names.iter().rev().skip(1) {
            out = format!("[{n},{out}]");
        }
        out
    }
}

fn evaluate_all(fields: &[VectorField], x0: &[f64]) -> Result<Vec<Vec<f64>>, HormanderError> {
    fields
        .par_iter()
        .map(|f| f.eval(0.0, x0).map_err(HormanderError::from))
        .collect()
}

/// Incremental generator of the hierarchy, level by level.
struct Hierarchy<'a> {
    fields: &'a VectorFieldSet,
    base: Vec<usize>,
    x0: &'a [f64],
    cap: usize,
    total: usize,
}

impl<'a> Hierarchy<'a> {
    fn new(fields: &'a VectorFieldSet, x0: &'a [f64], include_drift: bool, cap: usize) -> Result<Self, HormanderError> {
        if x0.len() != fields.dim() {
            return Err(HormanderError::Point { dim: fields.dim(), got: x0.len() });
        }
        let start = if include_drift { 0 } else { 1 };
        Ok(Hierarchy { fields, base: (start..fields.fields.len()).collect(), x0, cap, total: 0 })
    }

    fn level_one(&mut self) -> Result<Vec<BracketNode>, HormanderError> {
        let diffusion: Vec<VectorField> = self.fields.diffusion().to_vec();
        self.admit(1, diffusion.len())?;
        let values = evaluate_all(&diffusion, self.x0)?;
        Ok(diffusion
            .into_iter()
            .zip(values)
            .enumerate()
            .map(|(i, (field, value_at_x0))| BracketNode { field, word: vec![i + 1], level: 1, value_at_x0 })
            .collect())
    }

    fn next_level(&mut self, prev: &[BracketNode]) -> Result<Vec<BracketNode>, HormanderError> {
        let level = prev.first().map_or(2, |n| n.level + 1);
        self.admit(level, self.base.len() * prev.len())?;
        let mut nodes = Vec::with_capacity(self.base.len() * prev.len());
        for &i in &self.base {
            for p in prev {
                let field = lie_bracket(&self.fields.fields[i], &p.field)?;
                let mut word = vec![i];
                word.extend_from_slice(&p.word);
                nodes.push((field, word));
            }
        }
        let fields: Vec<VectorField> = nodes.iter().map(|(f, _)| f.clone()).collect();
        let values = evaluate_all(&fields, self.x0)?;
        Ok(nodes
            .into_iter()
            .zip(values)
            .map(|((field, word), value_at_x0)| BracketNode { field, word, level, value_at_x0 })
            .collect())
    }

    fn admit(&mut self, level: usize, count: usize) -> Result<(), HormanderError> {
        let needed = self.total + count;
        if needed > self.cap {
            return Err(HormanderError::Budget { level, needed, cap: self.cap });
        }
        self.total = needed;
        Ok(())
    }
}

/// All nodes up to level `n0`, breadth first, each evaluated at `x0`.
pub fn bracket_hierarchy(
    fields: &VectorFieldSet,
    x0: &[f64],
    n0: usize,
    include_drift: bool,
    cap: usize,
) -> Result<Vec<BracketNode>, HormanderError> {
    if n0 == 0 {
        return Err(HormanderError::InvalidLevel);
    }
    let mut h = Hierarchy::new(fields, x0, include_drift, cap)?;
    let mut level = h.level_one()?;
    let mut all = level.clone();
    for _ in 2..=n0 {
        level = h.next_level(&level)?;
        all.extend(level.iter().cloned());
    }
    Ok(all)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankDecision {
    pub dim: usize,
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub satisfied: bool,
    pub achieved_level: Option<usize>,
    pub tolerance: f64,
}

/// Rank tracker that keeps `U Σ` of the matrix seen so far, so adding a
/// column costs one `d x (d+1)` SVD regardless of how many came before.
struct RankAccumulator {
    dim: usize,
    reduced: DMatrix<f64>,
    tol: f64,
}

impl RankAccumulator {
    fn new(dim: usize, tol: f64) -> Self {
        RankAccumulator { dim, reduced: DMatrix::zeros(dim, 0), tol }
    }

    fn push(&mut self, v: &[f64]) {
        let k = self.reduced.ncols();
        let mut m = self.reduced.clone().insert_column(k, 0.0);
        m.column_mut(k).copy_from_slice(v);
        if m.ncols() <= self.dim {
            self.reduced = m;
            return;
        }
        let svd = m.svd(true, false);
        let u = svd.u.expect("requested U");
        let mut us = u.clone();
        for (j, s) in svd.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        self.reduced = us;
    }

    fn singular_values(&self) -> Vec<f64> {
        if self.reduced.ncols() == 0 {
            return vec![0.0; self.dim];
        }
        let mut sv: Vec<f64> = self.reduced.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.resize(self.dim, 0.0);
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    fn rank(&self) -> usize {
        rank_from_singular_values(&self.singular_values(), self.tol)
    }
}

fn rank_from_singular_values(sv: &[f64], tol: f64) -> usize {
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * max).count()
}

/// SVD rank of the columns `vectors` (each of length `dim`) with relative threshold.
pub fn rank_of(vectors: &[Vec<f64>], dim: usize, tol: f64) -> (usize, Vec<f64>) {
    let mut acc = RankAccumulator::new(dim, tol);
    vectors.iter().for_each(|v| acc.push(v));
    let sv = acc.singular_values();
    (rank_from_singular_values(&sv, tol), sv)
}

/// Rank of `[b(t0, x0), c(t0, x0)]`.
pub fn check_simplified(sys: &CoefficientSystem, x0: &[f64], t0: f64, tol: f64) -> Result<RankDecision, HormanderError> {
    if x0.len() != sys.dim() {
        return Err(HormanderError::Point { dim: sys.dim(), got: x0.len() });
    }
    let cols = (0..sys.wiener_dim())
        .map(FieldRef::Wiener)
        .chain((0..sys.fbm_dim()).map(FieldRef::Fbm))
        .map(|f| sys.eval_field(f, t0, x0))
        .collect::<Result<Vec<_>, _>>()?;
    let (rank, singular_values) = rank_of(&cols, sys.dim(), tol);
    let satisfied = rank == sys.dim();
    Ok(RankDecision {
        dim: sys.dim(),
        rank,
        singular_values,
        satisfied,
        achieved_level: satisfied.then_some(1),
        tolerance: tol,
    })
}

/// Row of the bracket table.
#[derive(Debug, Clone, Serialize)]
pub struct BracketRow {
    pub word: String,
    pub level: usize,
    pub value: Vec<f64>,
    pub cumulative_rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrongCheck {
    pub decision: RankDecision,
    pub table: Vec<BracketRow>,
}

/// Level-by-level rank of the bracket vectors at `x0`; stops at the first
/// level reaching full rank.
pub fn check_strong(
    fields: &VectorFieldSet,
    x0: &[f64],
    n0: usize,
    tol: f64,
    include_drift: bool,
    cap: usize,
) -> Result<StrongCheck, HormanderError> {
    if n0 == 0 {
        return Err(HormanderError::InvalidLevel);
    }
    let d = fields.dim();
    let mut h = Hierarchy::new(fields, x0, include_drift, cap)?;
    let mut acc = RankAccumulator::new(d, tol);
    let mut table = Vec::new();
    let mut level = h.level_one()?;
    let mut achieved = None;
    for k in 1..=n0 {
        if k > 1 {
            level = h.next_level(&level)?;
        }
        for node in &level {
            acc.push(&node.value_at_x0);
            table.push(BracketRow {
                word: node.word_label(),
                level: k,
                value: node.value_at_x0.clone(),
                cumulative_rank: acc.rank(),
            });
        }
        if acc.rank() == d {
            achieved = Some(k);
            break;
        }
    }
    let singular_values = acc.singular_values();
    let rank = rank_from_singular_values(&singular_values, tol);
    Ok(StrongCheck {
        decision: RankDecision { dim: d, rank, singular_values, satisfied: rank == d, achieved_level: achieved, tolerance: tol },
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{preset, random_points, PresetParams};

    fn field(src: &[&str]) -> VectorField {
        VectorField::parse(src).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn bracket_examples() {
        let c1 = field(&["1", "2"]);
        let c2 = field(&["-3", "0.5"]);
        let z = lie_bracket(&c1, &c2).unwrap();
        assert!(z.components().iter().all(Expr::is_zero));

        // V = Ax, W = Bx  =>  [V, W] = (BA - AB) x
        let v = field(&["2*x1 - x2", "x1 + 3*x2"]);
        let w = field(&["x2", "-x1 + 0.5*x2"]);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]);
        let comm = &b * &a - &a * &b;
        let br = lie_bracket(&v, &w).unwrap();
        for p in random_points(2, 10, 3.0, 1) {
            let expected = &comm * nalgebra::DVector::from_column_slice(&p);
            assert!(close(&br.eval(0.0, &p).unwrap(), expected.as_slice(), 1e-12));
        }

        let heis = lie_bracket(&field(&["1", "0"]), &field(&["0", "x1"])).unwrap();
        for p in random_points(2, 5, 3.0, 2) {
            assert_eq!(heis.eval(0.0, &p).unwrap(), vec![0.0, 1.0]);
        }
        assert!(lie_bracket(&field(&["1"]), &field(&["0", "x1"])).is_err());
    }

    #[test]
    fn hierarchy_counts_and_values() {
        let heis = preset("heisenberg", &PresetParams::default()).unwrap().vector_fields().unwrap();
        let nodes = bracket_hierarchy(&heis, &[0.0, 0.0], 3, false, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(nodes.iter().filter(|n| n.level == 1).count(), 2);
        assert_eq!(nodes.iter().filter(|n| n.level == 2).count(), 4);
        assert_eq!(nodes.iter().filter(|n| n.level == 3).count(), 8);
        assert_eq!(nodes[0].value_at_x0, vec![1.0, 0.0]);
        assert_eq!(nodes[1].value_at_x0, vec![0.0, 0.0]);
        let v12 = nodes.iter().find(|n| n.word == vec![1, 2]).unwrap();
        assert_eq!(v12.value_at_x0, vec![0.0, 1.0]);
        assert_eq!(v12.word_label(), "[V1,V2]");

        let with_drift = bracket_hierarchy(&heis, &[0.0, 0.0], 2, true, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(with_drift.len(), 2 + 3 * 2);
        assert!(matches!(
            bracket_hierarchy(&heis, &[0.0, 0.0], 5, false, 20),
            Err(HormanderError::Budget { level: 4, .. })
        ));
        assert!(matches!(bracket_hierarchy(&heis, &[0.0, 0.0], 0, false, 10), Err(HormanderError::InvalidLevel)));
    }

    #[test]
    fn commuting_constant_fields_have_zero_brackets() {
        let sys = preset("additive", &PresetParams { dim: 2, sigma: 1.0, gamma: 2.0, mu: 0.0 }).unwrap();
        let nodes = bracket_hierarchy(&sys.vector_fields().unwrap(), &[1.0, 2.0], 3, false, 1000).unwrap();
        assert!(nodes.iter().filter(|n| n.level >= 2).all(|n| n.value_at_x0.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn simplified_condition_examples() {
        let full = preset("additive", &PresetParams { dim: 2, sigma: 1.0, gamma: 0.0, mu: 0.0 }).unwrap();
        let r = check_simplified(&full, &[0.0, 0.0], 0.0, DEFAULT_TOLERANCE).unwrap();
        assert!(r.satisfied && r.rank == 2 && r.achieved_level == Some(1));

        let single = CoefficientSystem::autonomous("s", &["0", "0"], &[&["1"], &["0"]], &[]).unwrap();
        let r = check_simplified(&single, &[0.0, 0.0], 0.0, DEFAULT_TOLERANCE).unwrap();
        assert!(!r.satisfied && r.rank == 1);

        let near = CoefficientSystem::autonomous("n", &["0", "0"], &[&["1"], &["0"]], &[&["1"], &["1e-12"]]).unwrap();
        let r = check_simplified(&near, &[0.0, 0.0], 0.0, 1e-8).unwrap();
        assert!(!r.satisfied && r.rank == 1);
        assert!(r.singular_values[1] < 1e-12);
    }

    #[test]
    fn strong_condition_examples() {
        let heis = preset("heisenberg", &PresetParams::default()).unwrap().vector_fields().unwrap();
        let r = check_strong(&heis, &[0.0, 0.0], 4, DEFAULT_TOLERANCE, false, DEFAULT_NODE_CAP).unwrap();
        assert!(r.decision.satisfied);
        assert_eq!(r.decision.achieved_level, Some(2));
        assert_eq!(r.table.last().unwrap().cumulative_rank, 2);
        assert_eq!(r.table[1].cumulative_rank, 1);

        let deg = preset("degenerate", &PresetParams::default()).unwrap().vector_fields().unwrap();
        let r = check_strong(&deg, &[0.3, 0.0], 4, DEFAULT_TOLERANCE, true, DEFAULT_NODE_CAP).unwrap();
        assert!(!r.decision.satisfied && r.decision.rank == 1 && r.decision.achieved_level.is_none());

        let full = preset("additive", &PresetParams { dim: 3, ..Default::default() }).unwrap().vector_fields().unwrap();
        let r = check_strong(&full, &[0.0; 3], 3, DEFAULT_TOLERANCE, false, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(r.decision.achieved_level, Some(1));
    }

    #[test]
    fn antisymmetry_and_jacobi() {
        let u = field(&["x1*x2", "x2^2 - 1", "3*x3"]);
        let v = field(&["x3", "x1^3", "x1*x2*x3"]);
        let w = field(&["2 - x2", "x1 + x3^2", "x1*x1"]);
        let uv = lie_bracket(&u, &v).unwrap();
        let vu = lie_bracket(&v, &u).unwrap();
        let j1 = lie_bracket(&u, &lie_bracket(&v, &w).unwrap()).unwrap();
        let j2 = lie_bracket(&v, &lie_bracket(&w, &u).unwrap()).unwrap();
        let j3 = lie_bracket(&w, &uv).unwrap();
        for p in random_points(3, 20, 2.0, 3) {
            let a = uv.eval(0.0, &p).unwrap();
            let b = vu.eval(0.0, &p).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| (x + y).abs() <= 1e-12));
            let s: Vec<f64> = (0..3)
                .map(|i| j1.eval(0.0, &p).unwrap()[i] + j2.eval(0.0, &p).unwrap()[i] + j3.eval(0.0, &p).unwrap()[i])
                .collect();
            assert!(s.iter().all(|x| x.abs() <= 1e-10), "{s:?}");
        }
    }
}
