//! Recovery of the Taylor coefficients of `c̃` at `x_n = 0` from boundary data.
//!
//! If the metrics `g` and `c̃ g` share their first linearization, the
//! difference `d` of the order-`N` linearizations solves
//! `L d + (n−1)/(2λ) ∂^{N+1}_{x_n} c̃ · v_1 ⋯ v_N = 0` with `d = 0` on `∂Ω`.
//! Pairing with an adjoint solution `v0` gives
//!
//! ```text
//! ∫_Ω (n−1)/(2λ) φ v_1 ⋯ v_N v0 dV_ĝ = ∫_∂Ω v0 ∂_ν d dS,   dS = |ĝ|^{1/2} dσ,
//! ```
//!
//! one linear functional of `φ` per tuple and adjoint solution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dn::{neumann_trace, BoundaryTrace};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::geometry::{d1, laplace_beltrami_hat, partials};
use crate::grid::{Gamma, Grid, Side};
use crate::linalg::FactoredOperator;
use crate::linearization::{
    adjoint_trace, higher_lin_fd, smooth_bump, AdjointSolver, AdvectionOperatorSpec, Linearization, MAX_FD_ORDER,
};
use crate::metric::{ConformalFactor, MetricSpec, SampledMetric};
use crate::mse::{BoundaryData, SolverOptions};
use crate::quadrature::{integrate_boundary, integrate_volume};
use crate::spline::TensorBasis;

fn nm1_half(metric: &SampledMetric) -> f64 {
    (metric.dim() - 1) as f64 / 2.0
}

/// `∫_Ω weight · Π fields · v0 dV_ĝ`.
pub fn identity_volume(
    metric: &SampledMetric,
    weight: &ScalarField,
    fields: &[&ScalarField],
    v0: &ScalarField,
) -> Result<f64> {
    let mut prod = weight.mul(v0);
    for f in fields {
        f.same_grid(&prod)?;
        prod = prod.mul(f);
    }
    integrate_volume(&prod, metric)
}

/// `(n−1)/(2 c̃(x',0)) ∂^k_{x_n} c̃(x',0)` on the grid.
pub fn taylor_weight(metric: &SampledMetric, ctilde: &ConformalFactor, order: usize) -> ScalarField {
    let c0 = ctilde.coefficient(0);
    let ck = ctilde.coefficient(order);
    let s = nm1_half(metric);
    ScalarField::from_fn(*metric.grid(), |x, y| s * ck.eval(x, y) / c0.eval(x, y))
}

/// Volume side of the identity: `∫ (n−1)/(2c̃) ∂³c̃ v_k v_l v0 dV_ĝ`.
pub fn integral_identity_eval(
    metric: &SampledMetric,
    ctilde: &ConformalFactor,
    vk: &ScalarField,
    vl: &ScalarField,
    v0: &ScalarField,
) -> Result<f64> {
    if ctilde.coefficient(3).is_zero() {
        vk.same_grid(vl)?;
        vk.same_grid(v0)?;
        return Ok(0.0);
    }
    identity_volume(metric, &taylor_weight(metric, ctilde, 3), &[vk, vl], v0)
}

/// Boundary side of the identity: `∫_Γ v0 ∂_ν d dS`.
pub fn identity_boundary(metric: &SampledMetric, v0: &ScalarField, trace: &BoundaryTrace) -> Result<f64> {
    if v0.grid() != metric.grid() {
        return Err(Error::GridMismatch { left: v0.grid().n(), right: metric.grid().n() });
    }
    let weighted = BoundaryTrace {
        values: trace.nodes.iter().zip(&trace.values).map(|(&k, &t)| v0.values()[k] * t).collect(),
        ..trace.clone()
    };
    Ok(integrate_boundary(&weighted, metric))
}

/// `∂_ν (w̃ − w)` on `Γ`, with `w`, `w̃` the second linearizations of `g` and `c̃ g`.
pub fn second_order_trace_difference(
    metric: &SampledMetric,
    ctilde: &ConformalFactor,
    vk: &ScalarField,
    vl: &ScalarField,
    gamma: Gamma,
) -> Result<BoundaryTrace> {
    let w = Linearization::new(metric)?.second(vk, vl)?;
    let product = metric.spec().times(ctilde).sample(*metric.grid())?;
    let wt = Linearization::new(&product)?.second(vk, vl)?;
    neumann_trace(&wt.sub(&w), metric, gamma)
}

/// `|volume − boundary|` for one pair; `dn_difference` is `∂_ν(w̃ − w)` on `Γ`.
pub fn identity_residual_check(
    metric: &SampledMetric,
    ctilde: &ConformalFactor,
    vk: &ScalarField,
    vl: &ScalarField,
    v0: &ScalarField,
    dn_difference: &BoundaryTrace,
) -> Result<f64> {
    let vol = integral_identity_eval(metric, ctilde, vk, vl, v0)?;
    let bdy = identity_boundary(metric, v0, dn_difference)?;
    Ok((vol - bdy).abs())
}

/// First-linearization solutions with boundary data and the pairs `(k, l)`
/// whose products enter the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionPairFamily {
    pub gamma: Gamma,
    pub data: Vec<BoundaryData>,
    pub fields: Vec<ScalarField>,
    pub pairs: Vec<(usize, usize)>,
    /// Function repeated in the tuples of orders above 3.
    pub filler: usize,
    pub recipe: String,
}

/// Minimum family size for coefficient recovery.
pub const MIN_PAIRS: usize = 20;

/// Boundary data of the Fourier recipe: a filler (the constant `1` on the full
/// boundary, a centred bump on a partial `Γ`) followed by `sin(mπs)` traces
/// on each side, or on the admissible part of `Γ`.
pub fn fourier_data(grid: Grid, gamma: Gamma, modes: usize) -> Result<Vec<BoundaryData>> {
    use std::f64::consts::PI;
    let mut out = Vec::new();
    match gamma.interval(&grid) {
        None => {
            out.push(BoundaryData::from_fn(grid, |_, _| 1.0)?);
            for m in 1..=modes {
                for side in Side::ALL {
                    let mut field = ScalarField::zeros(grid);
                    for p in 0..grid.n() {
                        let k = side.node(&grid, p);
                        field.values_mut()[k] = (m as f64 * PI * grid.coord(p)).sin();
                    }
                    // corners: sin vanishes there, so shared values agree
                    out.push(BoundaryData::new(&field, Gamma::All)?);
                }
            }
        }
        Some((side, s0, s1)) => {
            let buffer = crate::grid::GAMMA_BUFFER as f64 * grid.h();
            let (lo, hi) = (s0 + buffer, s1 - buffer);
            let param = move |x: f64, y: f64| match side {
                Side::Bottom | Side::Top => x,
                _ => y,
            };
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            out.push(BoundaryData::restricted(grid, gamma, move |x, y| smooth_bump((param(x, y) - mid) / half))?);
            for m in 1..=modes {
                out.push(BoundaryData::restricted(grid, gamma, move |x, y| {
                    (m as f64 * PI * (param(x, y) - lo) / (hi - lo)).sin()
                })?);
            }
        }
    }
    Ok(out)
}

impl SolutionPairFamily {
    /// Fourier family with the first `count` pairs in the order
    /// `(k, l)`, `k ≤ l`, sorted by `l` then `k`.
    pub fn fourier(lin: &Linearization, gamma: Gamma, count: usize, modes: usize) -> Result<Self> {
        let grid = *lin.metric().grid();
        let data = fourier_data(grid, gamma, modes)?;
        let mut pairs = Vec::new();
        'outer: for l in 0..data.len() {
            for k in 0..=l {
                if pairs.len() == count {
                    break 'outer;
                }
                pairs.push((k, l));
            }
        }
        if pairs.len() < count {
            return Err(Error::InvalidArgument(format!(
                "{} Fourier traces give only {} pairs, {count} requested",
                data.len(),
                pairs.len()
            )));
        }
        let fields = data.par_iter().map(|f| lin.first(f)).collect::<Result<Vec<_>>>()?;
        Ok(SolutionPairFamily {
            gamma,
            data,
            fields,
            pairs,
            filler: 0,
            recipe: format!("fourier:modes={modes}:pairs={count}"),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Indices entering the order-`order` identity for pair `p`.
    pub fn tuple(&self, p: usize, order: usize) -> Vec<usize> {
        let (k, l) = self.pairs[p];
        let mut t = vec![k, l];
        t.extend(std::iter::repeat_n(self.filler, order.saturating_sub(3)));
        t
    }
}

/// Adjoint solutions `v0` with the first `count` traces of [`adjoint_trace`].
pub fn adjoint_family(metric: &SampledMetric, gamma: Gamma, count: usize) -> Result<Vec<ScalarField>> {
    let solver = AdjointSolver::new(metric)?;
    (0..count).into_par_iter().map(|a| solver.solve(&adjoint_trace(*metric.grid(), gamma, a)?)).collect()
}

fn check_order(order: usize) -> Result<()> {
    if !(3..=MAX_FD_ORDER + 1).contains(&order) {
        return Err(Error::InvalidOrder(order));
    }
    Ok(())
}

/// `∂^{order−1}_ε ∂_ν u` on `Γ` for every tuple of the family, by central
/// differences of the nonlinear Dirichlet-to-Neumann map.
pub fn dn_derivative_traces(
    metric: &SampledMetric,
    family: &SolutionPairFamily,
    order: usize,
    eps: f64,
    opts: &SolverOptions,
) -> Result<Vec<BoundaryTrace>> {
    check_order(order)?;
    (0..family.len())
        .map(|p| {
            let fs: Vec<&BoundaryData> = family.tuple(p, order).into_iter().map(|k| &family.data[k]).collect();
            let u = higher_lin_fd(metric, &fs, eps, false, opts)?;
            neumann_trace(&u, metric, family.gamma)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Cubic B-splines per axis of the coefficient basis.
    pub basis_per_axis: usize,
    /// Surface value `c̃(x', 0)`, fixed by the gauge.
    pub lambda_hat: f64,
    /// Weight of the first-difference penalty on neighbouring coefficients,
    /// relative to the mean diagonal of the normal matrix.
    pub ridge: f64,
    pub max_condition: f64,
    /// Drop the basis functions that do not vanish on `∂Ω`.
    pub vanish_on_boundary: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            basis_per_axis: 8,
            lambda_hat: 1.0,
            ridge: 1e-5,
            max_condition: 1e10,
            vanish_on_boundary: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub order: usize,
    pub coeffs: Vec<f64>,
    /// `∂^order_{x_n} c̃(x', 0)` on interior nodes, zero on the boundary.
    pub field: ScalarField,
    /// Relative least-squares misfit.
    pub residual_norm: f64,
    /// Condition number of the regularised normal matrix.
    pub condition: f64,
    pub rows: usize,
    pub pairs: usize,
}

/// Least-squares estimate of `∂^order_{x_n} c̃(·, 0)` on a tensor B-spline basis.
///
/// `metric` is the model metric whose lower-order coefficients agree with the
/// measured one; `model_traces` and `measured_traces` are the order-`order − 1`
/// DN derivatives per family tuple.
pub fn recover_taylor_coefficient(
    metric: &SampledMetric,
    order: usize,
    model_traces: &[BoundaryTrace],
    measured_traces: &[BoundaryTrace],
    family: &SolutionPairFamily,
    v0_family: &[ScalarField],
    opts: &RecoveryOptions,
) -> Result<CoefficientEstimate> {
    check_order(order)?;
    if family.len() < MIN_PAIRS {
        return Err(Error::InvalidArgument(format!("recovery needs at least {MIN_PAIRS} pairs, got {}", family.len())));
    }
    if model_traces.len() != family.len() || measured_traces.len() != family.len() {
        return Err(Error::InvalidArgument("one DN trace per family pair is required".into()));
    }
    if v0_family.is_empty() {
        return Err(Error::InvalidArgument("empty adjoint family".into()));
    }
    if !(opts.lambda_hat > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_hat must be positive, got {}", opts.lambda_hat)));
    }
    let grid = *metric.grid();
    let basis = TensorBasis::new(opts.basis_per_axis)?;
    let per = basis.per_axis();
    let active: Vec<usize> = (0..basis.len())
        .filter(|b| {
            let (i, j) = (b % per, b / per);
            !opts.vanish_on_boundary || (i != 0 && j != 0 && i + 1 != per && j + 1 != per)
        })
        .collect();
    let nb = active.len();
    let s = nm1_half(metric) / opts.lambda_hat;
    let basis_fields: Vec<ScalarField> = active.iter().map(|&b| basis.sample(grid, b).scale(s)).collect();

    let diffs = (0..family.len()).map(|p| measured_traces[p].sub(&model_traces[p])).collect::<Result<Vec<_>>>()?;
    let rows: Vec<(Vec<f64>, f64)> = (0..family.len())
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut prod = ScalarField::constant(grid, 1.0);
            for k in family.tuple(p, order) {
                prod = prod.mul(&family.fields[k]);
            }
            let (basis_fields, diff) = (&basis_fields, &diffs[p]);
            v0_family.iter().map(move |v0| -> Result<(Vec<f64>, f64)> {
                let pv = prod.mul(v0);
                let row = basis_fields
                    .iter()
                    .map(|bf| integrate_volume(&bf.mul(&pv), metric))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((row, identity_boundary(metric, v0, diff)?))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let m = rows.len();
    let a = DMatrix::from_fn(m, nb, |r, c| rows[r].0[c]);
    let rhs = DVector::from_iterator(m, rows.iter().map(|r| r.1));
    let (coeffs, condition) = smoothed_least_squares(&a, &rhs, &active, per, opts.ridge)?;
    if condition > opts.max_condition {
        return Err(Error::IllPosed { condition });
    }
    let misfit = (&a * &coeffs - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
    let mut full = vec![0.0; basis.len()];
    for (&b, c) in active.iter().zip(coeffs.iter()) {
        full[b] = *c;
    }
    let coeffs = full;
    let field = basis.sample_coeffs(grid, &coeffs).interior_only();
    Ok(CoefficientEstimate { order, coeffs, field, residual_norm: misfit, condition, rows: m, pairs: family.len() })
}

/// Solve `min ‖A x − b‖² + α Σ (x_p − x_q)²` over neighbouring basis
/// coefficients, with dropped coefficients held at zero and
/// `α = ridge · mean(diag AᵀA)`. Returns the solution and the condition
/// number of the penalised normal matrix.
fn smoothed_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    active: &[usize],
    per_axis: usize,
    ridge: f64,
) -> Result<(DVector<f64>, f64)> {
    let mut gram = a.transpose() * a;
    let nb = gram.nrows();
    let alpha = ridge * gram.trace() / nb as f64;
    if alpha > 0.0 {
        let slot = |i: usize, j: usize| active.iter().position(|&c| c == i + per_axis * j);
        let mut dropped = vec![true; per_axis * per_axis];
        for &c in active {
            dropped[c] = false;
        }
        for (p, &c) in active.iter().enumerate() {
            let (i, j) = (c % per_axis, c / per_axis);
            let neighbours = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
            for (ni, nj) in neighbours {
                if ni >= per_axis || nj >= per_axis {
                    continue;
                }
                gram[(p, p)] += alpha;
                match slot(ni, nj) {
                    Some(q) => gram[(p, q)] -= alpha,
                    None => debug_assert!(dropped[ni + per_axis * nj]),
                }
            }
        }
    }
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > 1e16 {
        return Err(Error::IllPosed { condition });
    }
    let x = gram.cholesky().ok_or(Error::IllPosed { condition })?.solve(&(a.transpose() * b));
    Ok((x, condition))
}

/// `c̃(x', t) = λ̂ + Σ_k φ_k t^k / k!` from recovered coefficient fields.
pub fn conformal_from_estimates(
    lambda_hat: f64,
    estimates: &BTreeMap<usize, CoefficientEstimate>,
    basis_per_axis: usize,
) -> Result<ConformalFactor> {
    let basis = TensorBasis::new(basis_per_axis)?;
    let mut higher = Vec::new();
    for (&k, est) in estimates {
        let b = basis.clone();
        let c = est.coeffs.clone();
        higher.push((k, crate::expr::ScalarFn::native(move |x, y| b.eval(&c, x, y))));
    }
    ConformalFactor::new(crate::expr::ScalarFn::constant(lambda_hat), higher)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderDiagnostics {
    pub order: usize,
    pub residual_norm: f64,
    pub condition: f64,
    pub rows: usize,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub lambda_hat: f64,
    pub coeff_fields: BTreeMap<usize, ScalarField>,
    pub diagnostics: Vec<OrderDiagnostics>,
}

/// Sequential recovery of orders `3..=max_order`: each order uses a model
/// metric carrying the coefficients recovered so far.
#[allow(clippy::too_many_arguments)]
pub fn recover_sequence(
    base: &MetricSpec,
    measured: &SampledMetric,
    family: &SolutionPairFamily,
    v0_family: &[ScalarField],
    max_order: usize,
    eps: f64,
    solver: &SolverOptions,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    check_order(max_order)?;
    let grid = *measured.grid();
    let mut estimates = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for order in 3..=max_order {
        let model_factor = conformal_from_estimates(opts.lambda_hat, &estimates, opts.basis_per_axis)?;
        let model = base.times(&model_factor).sample(grid)?;
        let model_traces = dn_derivative_traces(&model, family, order, eps, solver)?;
        let measured_traces = dn_derivative_traces(measured, family, order, eps, solver)?;
        let est = recover_taylor_coefficient(&model, order, &model_traces, &measured_traces, family, v0_family, opts)?;
        diagnostics.push(OrderDiagnostics {
            order,
            residual_norm: est.residual_norm,
            condition: est.condition,
            rows: est.rows,
            pairs: est.pairs,
        });
        estimates.insert(order, est);
    }
    Ok(RecoveryResult {
        lambda_hat: opts.lambda_hat,
        coeff_fields: estimates.into_iter().map(|(k, e)| (k, e.field)).collect(),
        diagnostics,
    })
}

/// Relative discrete `L²` error over interior nodes.
pub fn relative_l2_interior(estimate: &ScalarField, truth: &ScalarField) -> Result<f64> {
    estimate.same_grid(truth)?;
    Ok(estimate.sub(truth).l2_interior() / truth.l2_interior())
}

/// First-linearization DN traces `∂_ν v_f` on `Γ`.
pub fn first_order_dn(metric: &SampledMetric, data: &[BoundaryData], gamma: Gamma) -> Result<Vec<BoundaryTrace>> {
    let lin = Linearization::new(metric)?;
    data.par_iter().map(|f| neumann_trace(&lin.first(f)?, metric, gamma)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGradientOptions {
    pub basis_per_axis: usize,
    pub max_iters: usize,
    /// Relative size of the last step at which iteration stops.
    pub step_tol: f64,
    /// Singular values below this fraction of the largest are discarded.
    pub svd_cutoff: f64,
}

impl Default for SurfaceGradientOptions {
    fn default() -> Self {
        SurfaceGradientOptions { basis_per_axis: 4, max_iters: 20, step_tol: 1e-10, svd_cutoff: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGradientEstimate {
    /// `δX = ((1−n)/2) ĝ⁻¹ ∇ψ` with `ψ = log c̃(·, 0)`.
    pub delta_x: VectorField,
    /// `ψ` normalised to vanish at the anchor node.
    pub log_ctilde: ScalarField,
    pub lambda_hat: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub gradient_norm: f64,
}

struct GradientModel<'a> {
    metric: &'a SampledMetric,
    base: AdvectionOperatorSpec,
    basis: TensorBasis,
    /// `δX` of each basis function.
    shifts: Vec<VectorField>,
}

impl GradientModel<'_> {
    fn advection(&self, a: &[f64]) -> AdvectionOperatorSpec {
        let mut spec = self.base.clone();
        for (ab, dx) in a.iter().zip(&self.shifts) {
            if *ab != 0.0 {
                spec.x.x1.axpy(*ab, &dx.x1);
                spec.x.x2.axpy(*ab, &dx.x2);
            }
        }
        spec
    }

    fn operator(&self, a: &[f64]) -> Result<FactoredOperator> {
        self.advection(a).stencil(self.metric).factor()
    }
}

fn flatten(traces: &[BoundaryTrace]) -> Vec<f64> {
    traces.iter().flat_map(|t| t.values.iter().copied()).collect()
}

/// Gauss–Newton fit of `ψ = log c̃(·, 0)` so that the first-linearization DN
/// map with advection `X + δX(ψ)` reproduces the measured change
/// `dn1_ctilde − dn1_g`.
pub fn recover_surface_gradient(
    metric: &SampledMetric,
    data: &[BoundaryData],
    dn1_g: &[BoundaryTrace],
    dn1_ctilde: &[BoundaryTrace],
    gamma: Gamma,
    opts: &SurfaceGradientOptions,
) -> Result<SurfaceGradientEstimate> {
    if data.is_empty() || dn1_g.len() != data.len() || dn1_ctilde.len() != data.len() {
        return Err(Error::InvalidArgument("one trace per datum is required for both metrics".into()));
    }
    let grid = *metric.grid();
    let basis = TensorBasis::new(opts.basis_per_axis)?;
    let nb = basis.len();
    let factor = -nm1_half(metric);
    let shifts: Vec<VectorField> = (0..nb)
        .map(|b| {
            let mut e = vec![0.0; nb];
            e[b] = 1.0;
            let mut dx = VectorField::zeros(grid);
            for k in 0..grid.len() {
                let (x, y) = grid.xy(k);
                let v = metric.node(k).raise(basis.gradient(&e, x, y));
                dx.x1.values_mut()[k] = factor * v[0];
                dx.x2.values_mut()[k] = factor * v[1];
            }
            dx
        })
        .collect();
    let model = GradientModel { metric, base: AdvectionOperatorSpec::from_metric(metric), basis, shifts };

    let target: Vec<f64> = flatten(dn1_ctilde).iter().zip(flatten(dn1_g)).map(|(a, b)| a - b).collect();
    let reference = flatten(&first_order_dn(metric, data, gamma)?);
    let evaluate = |a: &[f64]| -> Result<(Vec<f64>, Vec<ScalarField>, FactoredOperator)> {
        let op = model.operator(a)?;
        let zero = ScalarField::zeros(grid);
        let vs: Vec<ScalarField> = data.iter().map(|f| op.solve(&zero, f.field())).collect::<Result<_>>()?;
        let traces = vs.iter().map(|v| neumann_trace(v, metric, gamma)).collect::<Result<Vec<_>>>()?;
        let r = flatten(&traces).iter().zip(&reference).zip(&target).map(|((t, r0), y)| t - r0 - y).collect();
        Ok((r, vs, op))
    };
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut a = vec![0.0; nb];
    let (mut r, mut vs, mut op) = evaluate(&a)?;
    let mut rn = norm(&r);
    let mut gradient_norm = 0.0;
    let mut iterations = 0;
    // traces carry roundoff of about 1e-10 relative to their size
    let noise = 1e-10 * norm(&reference);
    let target_scale = norm(&target);
    while rn > (1e-13 * target_scale).max(noise) && iterations < opts.max_iters {
        iterations += 1;
        let jac = jacobian(&model, &vs, &op, gamma)?;
        let j = DMatrix::from_fn(r.len(), nb, |row, col| jac[col][row]);
        let rv = DVector::from_column_slice(&r);
        let grad = j.transpose() * &rv;
        gradient_norm = grad.norm();
        let svd = j.svd(true, true);
        let cutoff = opts.svd_cutoff * svd.singular_values.max();
        let step = svd.solve(&(-&rv), cutoff).map_err(|e| Error::InvalidArgument(e.to_string()))?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(x, s)| x + t * s).collect();
            let (rt, vt, ot) = evaluate(&trial)?;
            let nt = norm(&rt);
            if nt < rn {
                accepted = Some((trial, rt, vt, ot, nt));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, rt, vt, ot, nt)) = accepted else {
            if rn <= (1e-8 * target_scale).max(noise) {
                break;
            }
            return Err(Error::Stagnation { gradient_norm });
        };
        let step_norm = t * step.norm();
        let a_norm = trial.iter().map(|v| v * v).sum::<f64>().sqrt();
        a = trial;
        r = rt;
        vs = vt;
        op = ot;
        rn = nt;
        if step_norm <= opts.step_tol * (1.0 + a_norm) {
            break;
        }
    }

    let delta_x = model.advection(&a).x.sub(&model.base.x);
    let mut psi = model.basis.sample_coeffs(grid, &a);
    let anchor = gamma.nodes(&grid).first().copied().unwrap_or(0);
    let offset = psi.values()[anchor];
    psi = psi.map(|v| v - offset);
    let mean = psi.values().iter().sum::<f64>() / psi.values().len() as f64;
    Ok(SurfaceGradientEstimate {
        delta_x,
        log_ctilde: psi,
        lambda_hat: mean.exp(),
        iterations,
        residual_norm: rn,
        gradient_norm,
    })
}

/// Columns `∂(traces)/∂a_b` of the DN residual: `L s = −δX_b·∇v`, `s = 0` on `∂Ω`.
fn jacobian(model: &GradientModel, vs: &[ScalarField], op: &FactoredOperator, gamma: Gamma) -> Result<Vec<Vec<f64>>> {
    let grid = *model.metric.grid();
    let grads: Vec<[ScalarField; 2]> = vs.iter().map(partials).collect();
    model
        .shifts
        .par_iter()
        .map(|dx| {
            let mut col = Vec::new();
            for [p1, p2] in &grads {
                let mut src = ScalarField::zeros(grid);
                for r in 0..grid.interior_len() {
                    let k = grid.interior_node(r);
                    src.values_mut()[k] = -(dx.x1.values()[k] * p1.values()[k] + dx.x2.values()[k] * p2.values()[k]);
                }
                let s = op.solve(&src, &ScalarField::zeros(grid))?;
                col.extend(neumann_trace(&s, model.metric, gamma)?.values);
            }
            Ok(col)
        })
        .collect()
}

/// Discrete curl `∂_1 ω_2 − ∂_2 ω_1` of `ω = ĝ(X1 − X2, ·)`.
pub fn discrete_curl(x1: &VectorField, x2: &VectorField, metric: &SampledMetric) -> Result<ScalarField> {
    let omega = lowered_difference(x1, x2, metric)?;
    let g = *metric.grid();
    let vals = (0..g.len())
        .map(|k| {
            let (i, j) = g.ij(k);
            d1(&omega[1], i, j, 0) - d1(&omega[0], i, j, 1)
        })
        .collect();
    ScalarField::from_values(g, vals)
}

fn lowered_difference(x1: &VectorField, x2: &VectorField, metric: &SampledMetric) -> Result<[ScalarField; 2]> {
    let g = *metric.grid();
    if *x1.grid() != g || *x2.grid() != g {
        return Err(Error::GridMismatch { left: x1.grid().n(), right: g.n() });
    }
    let diff = x1.sub(x2);
    let mut w1 = ScalarField::zeros(g);
    let mut w2 = ScalarField::zeros(g);
    for k in 0..g.len() {
        let w = metric.node(k).lower(diff.at(k));
        w1.values_mut()[k] = w[0];
        w2.values_mut()[k] = w[1];
    }
    Ok([w1, w2])
}

/// Absolute part of the closedness tolerance.
pub const CURL_ABS_TOL: f64 = 1e-6;
/// Relative part, against the largest `|∂_1 ω_2|`, `|∂_2 ω_1|` over the grid.
pub const CURL_REL_TOL: f64 = 0.05;

/// `φ` with `∇_ĝ φ = X1 − X2`, by trapezoidal integration of `ω = ĝ(X1 − X2, ·)`
/// along the anchor row and then along each column; `φ(anchor) = 0`.
pub fn poincare_potential(
    x1: &VectorField,
    x2: &VectorField,
    metric: &SampledMetric,
    anchor: usize,
) -> Result<ScalarField> {
    let g = *metric.grid();
    if anchor >= g.len() {
        return Err(Error::InvalidArgument(format!("anchor node {anchor} is outside the grid")));
    }
    let omega = lowered_difference(x1, x2, metric)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        let a = d1(&omega[1], i, j, 0);
        let b = d1(&omega[0], i, j, 1);
        worst = worst.max((a - b).abs());
        scale = scale.max(a.abs()).max(b.abs());
    }
    if worst > CURL_ABS_TOL + CURL_REL_TOL * scale {
        return Err(Error::NotClosed { curl: worst });
    }
    let n = g.n();
    let h = g.h();
    let (ia, ja) = g.ij(anchor);
    let mut phi = ScalarField::zeros(g);
    let mut row = vec![0.0; n];
    for i in ia + 1..n {
        row[i] = row[i - 1] + 0.5 * h * (omega[0].at(i - 1, ja) + omega[0].at(i, ja));
    }
    for i in (0..ia).rev() {
        row[i] = row[i + 1] - 0.5 * h * (omega[0].at(i, ja) + omega[0].at(i + 1, ja));
    }
    for i in 0..n {
        let mut acc = row[i];
        phi.values_mut()[g.idx(i, ja)] = acc;
        for j in ja + 1..n {
            acc += 0.5 * h * (omega[1].at(i, j - 1) + omega[1].at(i, j));
            phi.values_mut()[g.idx(i, j)] = acc;
        }
        acc = row[i];
        for j in (0..ja).rev() {
            acc -= 0.5 * h * (omega[1].at(i, j) + omega[1].at(i, j + 1));
            phi.values_mut()[g.idx(i, j)] = acc;
        }
    }
    Ok(phi)
}

/// `Δ_ĝ φ − ĝ(X1, ∇_ĝ φ) + ½ |∇_ĝ φ|²_ĝ`.
pub fn gauge_pde_residual(phi: &ScalarField, x1: &VectorField, metric: &SampledMetric) -> Result<ScalarField> {
    phi.check_finite()?;
    let lap = laplace_beltrami_hat(phi, metric)?;
    let [p1, p2] = partials(phi);
    let g = *metric.grid();
    let vals = (0..g.len())
        .map(|k| {
            let dphi = [p1.values()[k], p2.values()[k]];
            let x = x1.at(k);
            lap.values()[k] - (x[0] * dphi[0] + x[1] * dphi[1]) + 0.5 * metric.node(k).inner_inv(dphi, dphi)
        })
        .collect();
    ScalarField::from_values(g, vals)
}
