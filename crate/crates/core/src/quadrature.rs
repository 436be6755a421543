//! Trapezoidal quadrature with the Riemannian weights of `ĝ`.

use crate::dn::BoundaryTrace;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Gamma, Grid};
use crate::metric::SampledMetric;

#[inline]
fn w1(p: usize, n: usize) -> f64 {
    if p == 0 || p == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// `∫_Ω f dx` by the tensor trapezoidal rule.
pub fn integrate_euclidean(f: &ScalarField) -> f64 {
    let g = f.grid();
    let n = g.n();
    let h = g.h();
    let mut s = 0.0;
    for j in 0..n {
        let mut row = 0.0;
        for i in 0..n {
            row += w1(i, n) * f.at(i, j);
        }
        s += w1(j, n) * row;
    }
    s * h * h
}

/// `∫_Ω f dV_ĝ` with `dV_ĝ = |ĝ|^{1/2} dx`.
pub fn integrate_volume(f: &ScalarField, metric: &SampledMetric) -> Result<f64> {
    if f.grid() != metric.grid() {
        return Err(Error::GridMismatch { left: f.grid().n(), right: metric.grid().n() });
    }
    Ok(integrate_euclidean(&f.mul(&metric.sqrt_det_field())))
}

/// Trapezoid weight of a boundary node along its side within `Γ` (times `h`).
fn boundary_weight(grid: &Grid, gamma: Gamma, k: usize) -> f64 {
    match gamma {
        Gamma::Arc { side, i0, i1 } => match side.position(grid, k) {
            Some(p) if p == i0 || p == i1 => 0.5,
            Some(_) => 1.0,
            None => 0.0,
        },
        _ => 1.0,
    }
}

/// `∫_Γ t dS` with `dS = |ĝ|^{1/2} dσ`; corners carry no value.
pub fn integrate_boundary(trace: &BoundaryTrace, metric: &SampledMetric) -> f64 {
    let g = metric.grid();
    let h = g.h();
    trace
        .nodes
        .iter()
        .zip(&trace.values)
        .map(|(&k, &v)| boundary_weight(g, trace.gamma, k) * metric.node(k).sqrt_det * v)
        .sum::<f64>()
        * h
}

/// Per-node contributions to [`integrate_boundary`], in trace order.
pub fn boundary_contributions(trace: &BoundaryTrace, metric: &SampledMetric) -> Vec<f64> {
    let g = metric.grid();
    let h = g.h();
    trace
        .nodes
        .iter()
        .zip(&trace.values)
        .map(|(&k, &v)| h * boundary_weight(g, trace.gamma, k) * metric.node(k).sqrt_det * v)
        .collect()
}
