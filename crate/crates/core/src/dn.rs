//! Dirichlet-to-Neumann data: `f ↦ ∂_ν u_f` on `Γ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::d1;
use crate::grid::Gamma;
use crate::metric::SampledMetric;
use crate::mse::{solve_bvp_detailed, BoundaryData, NewtonReport, SolverOptions};

/// Values of a boundary function on the non-corner nodes of `Γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub gamma: Gamma,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
    /// Corner nodes of `Γ` left out of the trace.
    pub skipped_corners: usize,
}

impl BoundaryTrace {
    pub fn sub(&self, other: &BoundaryTrace) -> Result<BoundaryTrace> {
        if self.nodes != other.nodes {
            return Err(Error::InvalidArgument("traces live on different node sets".into()));
        }
        Ok(BoundaryTrace {
            gamma: self.gamma,
            nodes: self.nodes.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            skipped_corners: self.skipped_corners,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ a_k t_k` over traces on the same nodes.
    pub fn combination(terms: &[(f64, &BoundaryTrace)]) -> Result<BoundaryTrace> {
        let first = terms.first().ok_or_else(|| Error::InvalidArgument("empty combination".into()))?.1;
        let mut values = vec![0.0; first.values.len()];
        for (a, t) in terms {
            if t.nodes != first.nodes {
                return Err(Error::InvalidArgument("traces live on different node sets".into()));
            }
            for (v, tv) in values.iter_mut().zip(&t.values) {
                *v += a * tv;
            }
        }
        Ok(BoundaryTrace { values, ..first.clone() })
    }
}

/// `∂_ν u = ĝ^{ij} ∂_i u ν_j` with `ν` the outward Euclidean normal of each
/// side. Normal derivatives are one-sided (3 points), tangential ones central.
pub fn neumann_trace(u: &ScalarField, metric: &SampledMetric, gamma: Gamma) -> Result<BoundaryTrace> {
    let g = *metric.grid();
    if *u.grid() != g {
        return Err(Error::GridMismatch { left: u.grid().n(), right: g.n() });
    }
    gamma.validate(&g)?;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    let mut skipped = 0;
    for k in gamma.nodes(&g) {
        let (i, j) = g.ij(k);
        let Some(side) = g.side_of(i, j) else {
            skipped += 1;
            continue;
        };
        let du = [d1(u, i, j, 0), d1(u, i, j, 1)];
        let grad = metric.node(k).raise(du);
        let nu = side.normal();
        nodes.push(k);
        values.push(grad[0] * nu[0] + grad[1] * nu[1]);
    }
    Ok(BoundaryTrace { gamma, nodes, values, skipped_corners: skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DNRecord {
    pub f: BoundaryData,
    pub gamma: Gamma,
    pub neumann: BoundaryTrace,
    pub report: NewtonReport,
}

fn check_support(f: &BoundaryData, gamma: Gamma) -> Result<()> {
    let g = *f.grid();
    for k in g.boundary_nodes() {
        if f.field().values()[k] != 0.0 && !gamma.contains(&g, k) {
            return Err(Error::SupportViolation { node: k });
        }
    }
    Ok(())
}

/// Solve the Dirichlet problem for `f` and record `∂_ν u_f` on `Γ`.
pub fn dn_map(metric: &SampledMetric, f: &BoundaryData, gamma: Gamma, opts: &SolverOptions) -> Result<DNRecord> {
    check_support(f, gamma)?;
    let (u, report) = solve_bvp_detailed(metric, f, None, opts)?;
    let neumann = neumann_trace(&u, metric, gamma)?;
    Ok(DNRecord { f: f.clone(), gamma, neumann, report })
}

/// [`dn_map`] over a family, in order; the first failure is reported with its index.
pub fn dn_batch(
    metric: &SampledMetric,
    family: &[BoundaryData],
    gamma: Gamma,
    opts: &SolverOptions,
) -> Result<Vec<DNRecord>> {
    let results: Vec<Result<DNRecord>> = family.par_iter().map(|f| dn_map(metric, f, gamma, opts)).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|e| Error::Batch { index, source: Box::new(e) }))
        .collect()
}
