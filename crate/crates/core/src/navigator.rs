//! Navigators turn a coupling into one temporary target per agent.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::otcore::Coupling;

/// Destination states `x_j^d`, all of the same dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    points: Vec<Vec<f64>>,
}

impl TargetSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.is_empty() || dim == 0 {
            return Err(Error::Parameter("target set is empty".into()));
        }
        for (j, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::dim(
                    "TargetSet",
                    format!("target {j} has dimension {}, expected {dim}", p.len()),
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("target {j} is not finite")));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    /// `r̄ = max_j ‖x_j^d‖`.
    pub fn radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| crate::numerics::norm(p))
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for p in &self.points {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        let m = self.points.len() as f64;
        c.iter_mut().for_each(|v| *v /= m);
        c
    }

    /// Smallest distance between two distinct targets.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }
}

/// User-supplied navigator: maps a coupling and the targets to one target
/// per row.
pub type NavigatorFn = dyn Fn(&Coupling, &TargetSet, &[f64]) -> Result<Vec<Vec<f64>>> + Send + Sync;

#[derive(Clone, Default)]
pub enum NavigatorKind {
    #[default]
    Barycentric,
    External(Arc<NavigatorFn>),
}

impl fmt::Debug for NavigatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NavigatorKind::Barycentric => write!(f, "Barycentric"),
            NavigatorKind::External(_) => write!(f, "External(..)"),
        }
    }
}

impl NavigatorKind {
    pub fn targets(&self, coupling: &Coupling, targets: &TargetSet, a: &[f64]) -> Result<Vec<Vec<f64>>> {
        match self {
            NavigatorKind::Barycentric => barycentric_targets(coupling, targets, a),
            NavigatorKind::External(f) => f(coupling, targets, a),
        }
    }
}

/// `x_i^tmp = (1/a_i) Σ_j P_ij x_j^d`.
pub fn barycentric_targets(coupling: &Coupling, targets: &TargetSet, a: &[f64]) -> Result<Vec<Vec<f64>>> {
    if coupling.cols() != targets.len() || coupling.rows() != a.len() {
        return Err(Error::dim(
            "barycentric_targets",
            format!(
                "coupling {}x{}, {} targets, {} row marginals",
                coupling.rows(),
                coupling.cols(),
                targets.len(),
                a.len()
            ),
        ));
    }
    let dim = targets.dim();
    let mut out = Vec::with_capacity(coupling.rows());
    for (i, &ai) in a.iter().enumerate() {
        if !(ai > 0.0) {
            return Err(Error::DegenerateRow(i));
        }
        let mut t = vec![0.0; dim];
        for (p, x) in coupling.row(i).iter().zip(targets.points()) {
            for (tk, xk) in t.iter_mut().zip(x) {
                *tk += p * xk;
            }
        }
        t.iter_mut().for_each(|v| *v /= ai);
        out.push(t);
    }
    Ok(out)
}
