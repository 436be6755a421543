//! Finite-difference derivatives and Riemannian operators of `ĝ`.
//!
//! Second-order central differences in the interior, second-order one-sided
//! differences on the boundary.

use crate::error::Result;
use crate::field::{ScalarField, SymTensorField, VectorField};
use crate::grid::Grid;
use crate::metric::{sym, ChristoffelData, MetricSpec, SampledMetric};

/// Offsets and weights (times `h`) of the first-derivative stencil at position `p`.
#[inline]
pub fn d1_weights(p: usize, n: usize) -> ([isize; 3], [f64; 3]) {
    if p == 0 {
        ([0, 1, 2], [-1.5, 2.0, -0.5])
    } else if p == n - 1 {
        ([-2, -1, 0], [0.5, -2.0, 1.5])
    } else {
        ([-1, 0, 1], [-0.5, 0.0, 0.5])
    }
}

/// Offsets and weights (times `h²`) of the second-derivative stencil at `p`.
#[inline]
pub fn d2_weights(p: usize, n: usize) -> ([isize; 4], [f64; 4]) {
    if p == 0 {
        ([0, 1, 2, 3], [2.0, -5.0, 4.0, -1.0])
    } else if p == n - 1 {
        ([-3, -2, -1, 0], [-1.0, 4.0, -5.0, 2.0])
    } else {
        ([-1, 0, 1, 0], [1.0, -2.0, 1.0, 0.0])
    }
}

#[inline]
fn shift(p: usize, o: isize) -> usize {
    (p as isize + o) as usize
}

/// `∂_axis u` at node `(i, j)`.
pub fn d1(u: &ScalarField, i: usize, j: usize, axis: usize) -> f64 {
    let g = u.grid();
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let p = if axis == 0 { i } else { j };
    let (off, w) = d1_weights(p, n);
    let mut s = 0.0;
    for (o, wt) in off.iter().zip(w) {
        let (a, b) = if axis == 0 { (shift(i, *o), j) } else { (i, shift(j, *o)) };
        s += wt * u.at(a, b);
    }
    s * inv_h
}

/// `∂²_axis u` at node `(i, j)`.
pub fn d2(u: &ScalarField, i: usize, j: usize, axis: usize) -> f64 {
    let g = u.grid();
    let n = g.n();
    let h = g.h();
    let p = if axis == 0 { i } else { j };
    let (off, w) = d2_weights(p, n);
    let mut s = 0.0;
    for (o, wt) in off.iter().zip(w) {
        if wt == 0.0 {
            continue;
        }
        let (a, b) = if axis == 0 { (shift(i, *o), j) } else { (i, shift(j, *o)) };
        s += wt * u.at(a, b);
    }
    s / (h * h)
}

/// `∂_1 ∂_2 u` at `(i, j)` as the product of the two first-derivative stencils.
pub fn d12(u: &ScalarField, i: usize, j: usize) -> f64 {
    let g = u.grid();
    let n = g.n();
    let h = g.h();
    let (ox, wx) = d1_weights(i, n);
    let (oy, wy) = d1_weights(j, n);
    let mut s = 0.0;
    for (a, wa) in ox.iter().zip(wx) {
        if wa == 0.0 {
            continue;
        }
        for (b, wb) in oy.iter().zip(wy) {
            if wb == 0.0 {
                continue;
            }
            s += wa * wb * u.at(shift(i, *a), shift(j, *b));
        }
    }
    s / (h * h)
}

/// Partial derivatives `(∂_1 u, ∂_2 u)` on the whole grid.
pub fn partials(u: &ScalarField) -> [ScalarField; 2] {
    let g = *u.grid();
    let mut out = [ScalarField::zeros(g), ScalarField::zeros(g)];
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        out[0].values_mut()[k] = d1(u, i, j, 0);
        out[1].values_mut()[k] = d1(u, i, j, 1);
    }
    out
}

/// Christoffel symbols of `ĝ` sampled on `grid`.
pub fn christoffel_hat(metric: &MetricSpec, grid: Grid) -> Result<ChristoffelData> {
    Ok(metric.sample(grid)?.christoffel())
}

/// `(∇_ĝ u)^i = ĝ^{ij} ∂_j u`.
pub fn grad_hat(u: &ScalarField, metric: &SampledMetric) -> Result<VectorField> {
    u.same_grid(&ScalarField::zeros(*metric.grid()))?;
    let [p1, p2] = partials(u);
    let g = *u.grid();
    let mut out = VectorField::zeros(g);
    for k in 0..g.len() {
        let r = metric.node(k).raise([p1.values()[k], p2.values()[k]]);
        out.x1.values_mut()[k] = r[0];
        out.x2.values_mut()[k] = r[1];
    }
    Ok(out)
}

/// `(∇²_ĝ u)_{ij} = ∂_{ij} u − Γ̂^m_{ij} ∂_m u`.
pub fn hess_hat(u: &ScalarField, metric: &SampledMetric) -> Result<SymTensorField> {
    u.same_grid(&ScalarField::zeros(*metric.grid()))?;
    let g = *u.grid();
    let mut t = [ScalarField::zeros(g), ScalarField::zeros(g), ScalarField::zeros(g)];
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        let du = [d1(u, i, j, 0), d1(u, i, j, 1)];
        let second = [d2(u, i, j, 0), d12(u, i, j), d2(u, i, j, 1)];
        let geo = metric.node(k);
        for (s, out) in t.iter_mut().enumerate() {
            out.values_mut()[k] = second[s] - geo.gamma[0][s] * du[0] - geo.gamma[1][s] * du[1];
        }
    }
    let [t11, t12, t22] = t;
    Ok(SymTensorField { t11, t12, t22 })
}

/// `Δ_ĝ u = ĝ^{ij} (∇²_ĝ u)_{ij}`.
pub fn laplace_beltrami_hat(u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    let hess = hess_hat(u, metric)?;
    let g = *u.grid();
    let mut out = ScalarField::zeros(g);
    for k in 0..g.len() {
        let gi = metric.node(k).ginv;
        let hk = hess.at(k);
        out.values_mut()[k] = gi[0] * hk[0][0] + 2.0 * gi[sym(0, 1)] * hk[0][1] + gi[2] * hk[1][1];
    }
    Ok(out)
}

/// `|∇_ĝ u|²_ĝ = ĝ^{ij} ∂_i u ∂_j u`.
pub fn norm_grad_sq_hat(u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    u.same_grid(&ScalarField::zeros(*metric.grid()))?;
    let [p1, p2] = partials(u);
    let g = *u.grid();
    let mut out = ScalarField::zeros(g);
    for k in 0..g.len() {
        let du = [p1.values()[k], p2.values()[k]];
        out.values_mut()[k] = metric.node(k).inner_inv(du, du);
    }
    Ok(out)
}

/// `div_ĝ X = |ĝ|^{-1/2} ∂_i (|ĝ|^{1/2} X^i)`.
pub fn div_hat(x: &VectorField, metric: &SampledMetric) -> Result<ScalarField> {
    x.x1.same_grid(&ScalarField::zeros(*metric.grid()))?;
    let g = *x.grid();
    let sq = metric.sqrt_det_field();
    let f1 = x.x1.mul(&sq);
    let f2 = x.x2.mul(&sq);
    let mut out = ScalarField::zeros(g);
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        out.values_mut()[k] = (d1(&f1, i, j, 0) + d1(&f2, i, j, 1)) / sq.values()[k];
    }
    Ok(out)
}
