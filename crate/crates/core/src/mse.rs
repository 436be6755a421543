//! Minimal surface residual in three formulations and the small-data
//! Dirichlet problem.
//!
//! The residual of the graph `x_n = u(x')` is
//!
//! ```text
//! F = (−Δ_ĝu + (1−n)/(2c) ĝ^{mr} ∂_r c ∂_m u + (n−1)/(2c) ∂_t c)(1 + |∇_ĝu|²)
//!     + ∇²_ĝu(∇_ĝu, ∇_ĝu)
//! ```
//!
//! with `c` and its derivatives taken at `(x', u(x'))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Gamma, Grid};
use crate::linalg::{patch, StencilOperator};
use crate::metric::{ConformalValues, NodeGeometry, SampledMetric};

const C: usize = patch(0, 0);
const E: usize = patch(1, 0);
const W: usize = patch(-1, 0);
const N: usize = patch(0, 1);
const S: usize = patch(0, -1);
const NE: usize = patch(1, 1);
const NW: usize = patch(-1, 1);
const SE: usize = patch(1, -1);
const SW: usize = patch(-1, -1);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target sup-norm of the interior residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub backtrack_factor: f64,
    pub max_halvings: usize,
    /// Perturbation of the per-stencil Jacobian differences.
    pub jacobian_step: f64,
    /// Upper bound on the sup-norm of admissible boundary data.
    pub delta_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tol: 1e-10,
            max_newton_iters: 30,
            backtrack_factor: 0.5,
            max_halvings: 20,
            jacobian_step: 1e-7,
            delta_cap: 0.1,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.newton_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) || self.max_newton_iters == 0 {
            return Err(Error::InvalidArgument("newton_tol must be positive and max_newton_iters at least 1".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) || !(self.jacobian_step > 0.0) {
            return Err(Error::InvalidArgument("backtrack factor must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Dirichlet data on the boundary nodes, supported in `Γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    values: ScalarField,
    support: Gamma,
}

impl BoundaryData {
    pub fn zeros(grid: Grid) -> Self {
        BoundaryData { values: ScalarField::zeros(grid), support: Gamma::All }
    }

    /// Boundary values of `field`; they must vanish where `support` admits no data.
    pub fn new(field: &ScalarField, support: Gamma) -> Result<Self> {
        let grid = *field.grid();
        support.validate(&grid)?;
        field.check_finite()?;
        for k in grid.boundary_nodes() {
            if field.values()[k] != 0.0 && !support.admits_data(&grid, k) {
                return Err(Error::SupportViolation { node: k });
            }
        }
        Ok(BoundaryData { values: field.boundary_only(), support })
    }

    /// `f(x1, x2)` on the full boundary.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(&ScalarField::from_fn(grid, f), Gamma::All)
    }

    /// `f` on the nodes of `support` that admit data, zero elsewhere.
    pub fn restricted(grid: Grid, support: Gamma, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut field = ScalarField::zeros(grid);
        for k in grid.boundary_nodes() {
            if support.admits_data(&grid, k) {
                let (x, y) = grid.xy(k);
                field.values_mut()[k] = f(x, y);
            }
        }
        Self::new(&field, support)
    }

    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }

    pub fn support(&self) -> Gamma {
        self.support
    }

    /// Boundary values with interior zeros.
    pub fn field(&self) -> &ScalarField {
        &self.values
    }

    /// Sup-norm proxy for the data norm.
    pub fn smallness(&self) -> f64 {
        self.values.max_abs()
    }

    pub fn scaled(&self, s: f64) -> Self {
        BoundaryData { values: self.values.scale(s), support: self.support }
    }

    /// `Σ a_k f_k`; all terms must share one support.
    pub fn combination(terms: &[(f64, &BoundaryData)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::InvalidArgument("empty combination".into()))?;
        let mut values = ScalarField::zeros(*first.1.grid());
        for (a, f) in terms {
            f.values.same_grid(&values)?;
            if f.support != first.1.support {
                return Err(Error::InvalidArgument("combined data have different supports".into()));
            }
            values.axpy(*a, &f.values);
        }
        Ok(BoundaryData { values, support: first.1.support })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Sup-norm residual before the first and after every Newton step.
    pub residual_history: Vec<f64>,
    pub halvings: usize,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Whether some step shows a contraction ratio at most `factor` times the
    /// previous one (the signature of quadratic convergence).
    pub fn has_quadratic_phase(&self, factor: f64) -> bool {
        let r = &self.residual_history;
        r.windows(3).any(|w| w[0] > 0.0 && w[1] > 0.0 && w[2] / w[1] <= factor * (w[1] / w[0]))
    }
}

#[inline]
fn conformal_checked(metric: &SampledMetric, node: usize, t: f64) -> Result<ConformalValues> {
    let cv = metric.conformal_at(node, t);
    if !(cv.c > 0.0) {
        return Err(Error::DomainEscape { node, height: t, value: cv.c });
    }
    Ok(cv)
}

/// `F` from the first and second partials of `u` at one node.
#[inline]
pub(crate) fn f_pointwise(geo: &NodeGeometry, cv: &ConformalValues, dim: usize, du: [f64; 2], d2u: [f64; 3]) -> f64 {
    let nm1 = (dim - 1) as f64;
    let mut hs = [0.0; 3];
    for s in 0..3 {
        hs[s] = d2u[s] - geo.gamma[0][s] * du[0] - geo.gamma[1][s] * du[1];
    }
    let gi = geo.ginv;
    let lap = gi[0] * hs[0] + 2.0 * gi[1] * hs[1] + gi[2] * hs[2];
    let gr = geo.raise(du);
    let ng = du[0] * gr[0] + du[1] * gr[1];
    let hgg = hs[0] * gr[0] * gr[0] + 2.0 * hs[1] * gr[0] * gr[1] + hs[2] * gr[1] * gr[1];
    let a = geo.inner_inv(cv.dc, du);
    (-lap - nm1 / (2.0 * cv.c) * a + nm1 / (2.0 * cv.c) * cv.dt) * (1.0 + ng) + hgg
}

#[inline]
fn compact_derivs(p: &[f64; 9], h: f64) -> ([f64; 2], [f64; 3]) {
    let (ih, ih2) = (1.0 / h, 1.0 / (h * h));
    let du = [0.5 * (p[E] - p[W]) * ih, 0.5 * (p[N] - p[S]) * ih];
    let d2u = [
        (p[E] - 2.0 * p[C] + p[W]) * ih2,
        0.25 * (p[NE] - p[NW] - p[SE] + p[SW]) * ih2,
        (p[N] - 2.0 * p[C] + p[S]) * ih2,
    ];
    (du, d2u)
}

/// Residual at one interior node from its 3×3 patch of `u`.
#[inline]
pub(crate) fn local_residual(metric: &SampledMetric, node: usize, p: &[f64; 9], h: f64) -> Result<f64> {
    let cv = conformal_checked(metric, node, p[C])?;
    let (du, d2u) = compact_derivs(p, h);
    Ok(f_pointwise(metric.node(node), &cv, metric.dim(), du, d2u))
}

#[inline]
fn gather(u: &[f64], n: usize, k: usize) -> [f64; 9] {
    [u[k - n - 1], u[k - n], u[k - n + 1], u[k - 1], u[k], u[k + 1], u[k + n - 1], u[k + n], u[k + n + 1]]
}

fn check_grid(u: &ScalarField, metric: &SampledMetric) -> Result<()> {
    if u.grid() != metric.grid() {
        return Err(Error::GridMismatch { left: u.grid().n(), right: metric.grid().n() });
    }
    u.check_finite()
}

/// `F(u)` at interior nodes (boundary entries zero).
pub fn residual_f(u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    check_grid(u, metric)?;
    let g = *u.grid();
    let h = g.h();
    let mut out = ScalarField::zeros(g);
    for r in 0..g.interior_len() {
        let k = g.interior_node(r);
        out.values_mut()[k] = local_residual(metric, k, &gather(u.values(), g.n(), k), h)?;
    }
    Ok(out)
}

/// Fourth-order centred derivatives where the 5-point stencil fits, compact ones otherwise.
fn wide_derivs(u: &ScalarField, i: usize, j: usize) -> ([f64; 2], [f64; 3]) {
    let g = u.grid();
    let n = g.n();
    let h = g.h();
    if i < 2 || j < 2 || i + 2 >= n || j + 2 >= n {
        let k = g.idx(i, j);
        return compact_derivs(&gather(u.values(), n, k), h);
    }
    let w1 = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
    let w2 = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
    let at = |a: isize, b: isize| u.at((i as isize + a) as usize, (j as isize + b) as usize);
    let (mut ux, mut uy, mut uxx, mut uyy, mut uxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in 0..5 {
        let o = s as isize - 2;
        ux += w1[s] * at(o, 0);
        uy += w1[s] * at(0, o);
        uxx += w2[s] * at(o, 0);
        uyy += w2[s] * at(0, o);
        for t in 0..5 {
            uxy += w1[s] * w1[t] * at(o, t as isize - 2);
        }
    }
    ([ux / h, uy / h], [uxx / (h * h), uxy / (h * h), uyy / (h * h)])
}

/// `c²(|∇_g f|² Δ_g f − ∇²_g f(∇_g f, ∇_g f))` for `f = x_n − u(x')`,
/// built from the three-dimensional Christoffel symbols of `g = c(ĝ ⊕ 1)`
/// and evaluated on the graph.
pub fn residual_mean_curvature(u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    check_grid(u, metric)?;
    let g = *u.grid();
    let mut out = ScalarField::zeros(g);
    for r in 0..g.interior_len() {
        let k = g.interior_node(r);
        let (i, j) = g.ij(k);
        let cv = conformal_checked(metric, k, u.values()[k])?;
        let (du, d2u) = wide_derivs(u, i, j);
        out.values_mut()[k] = mean_curvature_pointwise(metric.node(k), &cv, du, d2u);
    }
    Ok(out)
}

fn mean_curvature_pointwise(geo: &NodeGeometry, cv: &ConformalValues, du: [f64; 2], d2u: [f64; 3]) -> f64 {
    let c = cv.c;
    let dc = [cv.dc[0], cv.dc[1], cv.dt];
    // G = ĝ ⊕ 1 and its first derivatives (nothing depends on x_n)
    let mut big_g = [[0.0; 3]; 3];
    let mut big_ginv = [[0.0; 3]; 3];
    for a in 0..2 {
        for b in 0..2 {
            big_g[a][b] = geo.g[a + b];
            big_ginv[a][b] = geo.ginv[a + b];
        }
    }
    big_g[2][2] = 1.0;
    big_ginv[2][2] = 1.0;
    let dbig = |a: usize, b: usize, d: usize| -> f64 {
        if a < 2 && b < 2 && d < 2 {
            geo.dg[d][a + b]
        } else {
            0.0
        }
    };
    // ∂_d g_ab = ∂_d c G_ab + c ∂_d G_ab
    let dgm = |a: usize, b: usize, d: usize| dc[d] * big_g[a][b] + c * dbig(a, b, d);
    let ginv = |a: usize, b: usize| big_ginv[a][b] / c;
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for kk in 0..3 {
        for a in 0..3 {
            for b in a..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    let gl = ginv(kk, l);
                    if gl != 0.0 {
                        s += gl * (dgm(l, b, a) + dgm(l, a, b) - dgm(a, b, l));
                    }
                }
                gamma[kk][a][b] = 0.5 * s;
                gamma[kk][b][a] = 0.5 * s;
            }
        }
    }
    let df = [-du[0], -du[1], 1.0];
    let mut hf = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let second = if a < 2 && b < 2 { -d2u[a + b] } else { 0.0 };
            let mut s = second;
            for kk in 0..3 {
                s -= gamma[kk][a][b] * df[kk];
            }
            hf[a][b] = s;
        }
    }
    let mut grad = [0.0; 3];
    for a in 0..3 {
        for b in 0..3 {
            grad[a] += ginv(a, b) * df[b];
        }
    }
    let norm2: f64 = (0..3).map(|a| grad[a] * df[a]).sum();
    let mut lap = 0.0;
    let mut hff = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            lap += ginv(a, b) * hf[a][b];
            hff += hf[a][b] * grad[a] * grad[b];
        }
    }
    c * c * (norm2 * lap - hff)
}

/// Divergence form of the equation, normalised so that it equals
/// `c⁻² η⁻³ F` with `η² = 1 + c⁻¹|∇_ĝu|²`:
///
/// ```text
/// −div_g(∇_g u / η) + [Δ_g u (1 − c⁻¹) − (2c²)⁻¹ (∇_g u)^j ∂_j c
///                      + (n−1)(2c³)⁻¹ ∂_t c (1 + |∇_ĝu|²)] / η³
/// ```
///
/// The divergence is taken in flux form over half-node faces with `c`
/// frozen at the height `u` of the centre node.
pub fn residual_divergence_form(u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    check_grid(u, metric)?;
    let g = *u.grid();
    let n = g.n();
    let h = g.h();
    let dim = metric.dim() as f64;
    let spec = metric.spec();
    let mut out = ScalarField::zeros(g);
    for r in 0..g.interior_len() {
        let k = g.interior_node(r);
        let p = gather(u.values(), n, k);
        let t0 = p[C];
        let cv = conformal_checked(metric, k, t0)?;
        let (x, y) = g.xy(k);

        // flux component `axis` of √g ∇_g u / η at a face midpoint
        let flux = |fx: f64, fy: f64, du: [f64; 2], axis: usize| -> Result<f64> {
            let geo = metric.geometry_at(fx, fy);
            let c = spec.c_at(fx, fy, t0);
            if !(c > 0.0) {
                return Err(Error::DomainEscape { node: k, height: t0, value: c });
            }
            let gr = geo.raise(du);
            let eta = (1.0 + (du[0] * gr[0] + du[1] * gr[1]) / c).sqrt();
            let sqrt_g = c.powf(0.5 * dim) * geo.sqrt_det;
            Ok(sqrt_g * gr[axis] / (c * eta))
        };
        let ih = 1.0 / h;
        let fe = flux(x + 0.5 * h, y, [(p[E] - p[C]) * ih, 0.25 * (p[N] + p[NE] - p[S] - p[SE]) * ih], 0)?;
        let fw = flux(x - 0.5 * h, y, [(p[C] - p[W]) * ih, 0.25 * (p[N] + p[NW] - p[S] - p[SW]) * ih], 0)?;
        let fnn = flux(x, y + 0.5 * h, [0.25 * (p[E] + p[NE] - p[W] - p[NW]) * ih, (p[N] - p[C]) * ih], 1)?;
        let fs = flux(x, y - 0.5 * h, [0.25 * (p[E] + p[SE] - p[W] - p[SW]) * ih, (p[C] - p[S]) * ih], 1)?;
        let geo = metric.node(k);
        let sqrt_g = cv.c.powf(0.5 * dim) * geo.sqrt_det;
        let div = (fe - fw + fnn - fs) * ih / sqrt_g;

        let (du, d2u) = compact_derivs(&p, h);
        let c = cv.c;
        let mut hs = [0.0; 3];
        for s in 0..3 {
            hs[s] = d2u[s] - geo.gamma[0][s] * du[0] - geo.gamma[1][s] * du[1];
        }
        let lap_hat = geo.ginv[0] * hs[0] + 2.0 * geo.ginv[1] * hs[1] + geo.ginv[2] * hs[2];
        let a = geo.inner_inv(cv.dc, du);
        let ng = geo.inner_inv(du, du);
        let lap_g = lap_hat / c + (dim - 2.0) / (2.0 * c * c) * a;
        let eta = (1.0 + ng / c).sqrt();
        let bracket =
            lap_g * (1.0 - 1.0 / c) - a / (2.0 * c * c * c) + (dim - 1.0) / (2.0 * c * c * c) * cv.dt * (1.0 + ng);
        out.values_mut()[k] = -div + bracket / eta.powi(3);
    }
    Ok(out)
}

/// The factor `c⁻² η⁻³` relating the divergence form to `F`.
pub fn divergence_form_weight(u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    check_grid(u, metric)?;
    let g = *u.grid();
    let mut out = ScalarField::zeros(g);
    for r in 0..g.interior_len() {
        let k = g.interior_node(r);
        let cv = conformal_checked(metric, k, u.values()[k])?;
        let (du, _) = compact_derivs(&gather(u.values(), g.n(), k), g.h());
        let eta2 = 1.0 + metric.node(k).inner_inv(du, du) / cv.c;
        out.values_mut()[k] = 1.0 / (cv.c * cv.c * eta2 * eta2.sqrt());
    }
    Ok(out)
}

/// `F(u*)` at every node from exact derivatives of `u*`; the source of a
/// manufactured solution.
pub fn manufactured_source(metric: &SampledMetric, u: &crate::expr::ScalarFn) -> Result<ScalarField> {
    let g = *metric.grid();
    let [ux, uy] = u.gradient_fn();
    let [uxx, uxy, uyy] = u.hessian_fn();
    let vals = (0..g.len())
        .map(|k| {
            let (x, y) = g.xy(k);
            let cv = conformal_checked(metric, k, u.eval(x, y))?;
            let du = [ux.eval(x, y), uy.eval(x, y)];
            let d2u = [uxx.eval(x, y), uxy.eval(x, y), uyy.eval(x, y)];
            Ok(f_pointwise(metric.node(k), &cv, metric.dim(), du, d2u))
        })
        .collect::<Result<Vec<f64>>>()?;
    ScalarField::from_values(g, vals)
}

/// Residual vector `F(u) − s` at the interior unknowns.
fn interior_residual(u: &[f64], metric: &SampledMetric, source: Option<&ScalarField>) -> Result<Vec<f64>> {
    let g = metric.grid();
    let h = g.h();
    (0..g.interior_len())
        .map(|r| {
            let k = g.interior_node(r);
            let f = local_residual(metric, k, &gather(u, g.n(), k), h)?;
            Ok(f - source.map_or(0.0, |s| s.values()[k]))
        })
        .collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Jacobian of the discrete residual by central differences of each stencil entry.
fn jacobian(u: &[f64], metric: &SampledMetric, step: f64) -> Result<StencilOperator> {
    let g = *metric.grid();
    let n = g.n();
    let h = g.h();
    let mut op = StencilOperator::zeros(g);
    for r in 0..g.interior_len() {
        let k = g.interior_node(r);
        let (i, j) = g.ij(k);
        let base = gather(u, n, k);
        let w = op.weights_mut(r);
        for dj in -1..=1isize {
            for di in -1..=1isize {
                let (a, b) = ((i as isize + di) as usize, (j as isize + dj) as usize);
                if g.is_boundary(a, b) {
                    continue;
                }
                let q = patch(di, dj);
                let mut p = base;
                p[q] = base[q] + step;
                let fp = local_residual(metric, k, &p, h)?;
                p[q] = base[q] - step;
                let fm = local_residual(metric, k, &p, h)?;
                w[q] = (fp - fm) / (2.0 * step);
            }
        }
    }
    Ok(op)
}

/// Solve `F(u) = 0`, `u = f` on `∂Ω`.
pub fn solve_bvp(metric: &SampledMetric, f: &BoundaryData, opts: &SolverOptions) -> Result<ScalarField> {
    solve_bvp_detailed(metric, f, None, opts).map(|(u, _)| u)
}

/// Damped Newton for `F(u) = s` in the interior, `u = f` on `∂Ω`.
pub fn solve_bvp_detailed(
    metric: &SampledMetric,
    f: &BoundaryData,
    source: Option<&ScalarField>,
    opts: &SolverOptions,
) -> Result<(ScalarField, NewtonReport)> {
    opts.validate()?;
    let g = *metric.grid();
    if *f.grid() != g {
        return Err(Error::GridMismatch { left: f.grid().n(), right: g.n() });
    }
    if let Some(s) = source {
        s.same_grid(f.field())?;
    }
    let smallness = f.smallness();
    if !(smallness < opts.delta_cap) {
        return Err(Error::DataTooLarge { smallness, cap: opts.delta_cap });
    }
    let mut u = f.field().clone();
    let mut res = interior_residual(u.values(), metric, source)?;
    let mut norm = sup(&res);
    let mut report = NewtonReport { residual_history: vec![norm], ..Default::default() };
    let zero = ScalarField::zeros(g);
    while norm > opts.newton_tol {
        if report.iterations == opts.max_newton_iters {
            return Err(Error::NoConvergence { iterations: report.iterations, residual: norm });
        }
        let jac = jacobian(u.values(), metric, opts.jacobian_step)?;
        let mut rhs = ScalarField::zeros(g);
        for (r, v) in res.iter().enumerate() {
            rhs.values_mut()[g.interior_node(r)] = -v;
        }
        let delta = jac.factor()?.solve(&rhs, &zero)?;
        let mut t = 1.0;
        let mut halvings = 0;
        loop {
            let mut trial = u.clone();
            trial.axpy(t, &delta);
            let attempt = interior_residual(trial.values(), metric, source);
            if let Ok(r_try) = attempt {
                let n_try = sup(&r_try);
                if n_try < norm || n_try <= opts.newton_tol {
                    u = trial;
                    res = r_try;
                    norm = n_try;
                    break;
                }
            }
            if halvings == opts.max_halvings {
                return Err(Error::NoConvergence { iterations: report.iterations, residual: norm });
            }
            t *= opts.backtrack_factor;
            halvings += 1;
        }
        report.iterations += 1;
        report.halvings += halvings;
        report.residual_history.push(norm);
    }
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarFn;
    use crate::metric::{default_conformal, ConformalFactor, MetricPreset, MetricSpec};

    fn metric(p: MetricPreset, c: ConformalFactor, n: usize) -> SampledMetric {
        MetricSpec::preset(p, c).sample(Grid::new(n).unwrap()).unwrap()
    }

    #[test]
    fn zero_is_a_solution_when_flat() {
        for p in MetricPreset::ALL {
            let m = metric(p, default_conformal(), 17);
            let r = residual_f(&ScalarField::zeros(*m.grid()), &m).unwrap();
            assert_eq!(r.max_abs(), 0.0);
            let mc = residual_mean_curvature(&ScalarField::zeros(*m.grid()), &m).unwrap();
            assert!(mc.max_abs() < 1e-15);
        }
    }

    #[test]
    fn affine_functions_solve_euclidean_equation() {
        let m = metric(MetricPreset::Euclidean, ConformalFactor::constant(1.0), 17);
        let u = ScalarField::from_fn(*m.grid(), |x, y| 0.03 * x - 0.02 * y + 0.01);
        assert!(residual_f(&u, &m).unwrap().max_abs() < 1e-12);
        assert!(residual_divergence_form(&u, &m).unwrap().max_abs() < 1e-12);
        assert!(residual_mean_curvature(&u, &m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn residual_matches_frozen_symbolic_values() {
        // ĝ = I, c = 1 + t³, u = 0.01 sin(πx1) sin(πx2); reference values of F
        // evaluated with exact derivatives by a computer-algebra system.
        let c = ConformalFactor::new(ScalarFn::constant(1.0), vec![(3, ScalarFn::constant(6.0))]).unwrap();
        let probes: [(f64, f64, f64); 5] = [
            (0.25, 0.25, 0.09881978555804746),
            (0.5, 0.5, 0.19769208772178748),
            (0.25, 0.75, 0.09881978555804746),
            (0.75, 0.5, 0.13976179727616111),
            (0.375, 0.625, 0.16872765809027124),
        ];
        let mut errs = Vec::new();
        for n in [33, 65] {
            let m = metric(MetricPreset::Euclidean, c.clone(), n);
            let g = *m.grid();
            let u = ScalarField::from_fn(g, |x, y| {
                0.01 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
            });
            let r = residual_f(&u, &m).unwrap();
            let e = probes.iter().map(|&(x, y, v)| (r.values()[g.nearest(x, y)] - v).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[1] < 1e-4, "{errs:?}");
        let rate = (errs[0] / errs[1]).log2();
        assert!((1.7..=2.3).contains(&rate), "rate {rate} ({errs:?})");
    }

    #[test]
    fn mean_curvature_matches_frozen_symbolic_values() {
        // Euclidean, c ≡ 1, u = 0.02 x1 x2: the mean-curvature form is cubic in ∇u
        let m = metric(MetricPreset::Euclidean, ConformalFactor::constant(1.0), 33);
        let g = *m.grid();
        let u = ScalarField::from_fn(g, |x, y| 0.02 * x * y);
        let r = residual_mean_curvature(&u, &m).unwrap();
        for &(x, y) in &[(0.25, 0.5), (0.5, 0.5), (0.75, 0.25)] {
            // F = H(∇u,∇u) = 2·u_xy·u_x·u_y with u_xy = 0.02
            let want = 2.0 * 0.02 * (0.02 * y) * (0.02 * x);
            assert!((r.values()[g.nearest(x, y)] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn gauge_scaling_leaves_residual_unchanged() {
        for p in MetricPreset::ALL {
            let c = default_conformal();
            let m1 = metric(p, c.clone(), 17);
            let m2 = metric(p, c.scaled(2.5), 17);
            let u = ScalarField::from_fn(*m1.grid(), |x, y| 0.04 * (3.0 * x).sin() * y * (1.0 - y));
            let a = residual_f(&u, &m1).unwrap();
            let b = residual_f(&u, &m2).unwrap();
            let scale = a.max_abs().max(1.0);
            assert!(a.sub(&b).max_abs() <= 1e-12 * scale, "{p}: {}", a.sub(&b).max_abs());
        }
    }

    #[test]
    fn constant_c_divergence_form_reduces_to_classical() {
        // c ≡ 1: the bracket vanishes and the form is −div_ĝ(∇_ĝu/√(1+|∇u|²))
        let m = metric(MetricPreset::DiagPoly, ConformalFactor::constant(1.0), 33);
        let g = *m.grid();
        let u = ScalarField::from_fn(g, |x, y| 0.05 * (x * y).sin());
        let d = residual_divergence_form(&u, &m).unwrap();
        let f = residual_f(&u, &m).unwrap();
        let w = divergence_form_weight(&u, &m).unwrap();
        assert!(d.sub(&f.mul(&w)).max_abs() < 1e-3);
    }

    #[test]
    fn solver_returns_zero_for_zero_data() {
        let m = metric(MetricPreset::ConformalExp, default_conformal(), 17);
        let u = solve_bvp(&m, &BoundaryData::zeros(*m.grid()), &SolverOptions::default()).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn solver_reproduces_affine_extension() {
        let m = metric(MetricPreset::Euclidean, ConformalFactor::constant(1.0), 17);
        let g = *m.grid();
        let f = BoundaryData::from_fn(g, |x, y| 0.02 + 0.03 * x - 0.04 * y).unwrap();
        let u = solve_bvp(&m, &f, &SolverOptions::default()).unwrap();
        let exact = ScalarField::from_fn(g, |x, y| 0.02 + 0.03 * x - 0.04 * y);
        assert!(u.sub(&exact).max_abs() < 1e-12);
    }

    #[test]
    fn oversized_data_and_bad_support_are_rejected() {
        let m = metric(MetricPreset::Euclidean, default_conformal(), 17);
        let g = *m.grid();
        let big = BoundaryData::from_fn(g, |_, _| 0.5).unwrap();
        assert!(matches!(solve_bvp(&m, &big, &SolverOptions::default()), Err(Error::DataTooLarge { .. })));
        let field = ScalarField::from_fn(g, |_, _| 0.01);
        assert!(matches!(
            BoundaryData::new(&field, Gamma::Side(crate::grid::Side::Left)),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn domain_escape_is_reported() {
        let c = ConformalFactor::new(ScalarFn::constant(1.0), vec![(3, ScalarFn::constant(-6.0e4))]).unwrap();
        let m = metric(MetricPreset::Euclidean, c, 9);
        let u = ScalarField::constant(*m.grid(), 0.09);
        assert!(matches!(residual_f(&u, &m), Err(Error::DomainEscape { .. })));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let m = metric(MetricPreset::DiagPoly, default_conformal(), 17);
        let f = BoundaryData::from_fn(*m.grid(), |x, y| 0.04 * (x + y)).unwrap();
        let opts = SolverOptions { max_newton_iters: 1, newton_tol: 1e-14, ..Default::default() };
        let r = solve_bvp(&m, &f, &opts);
        assert!(matches!(r, Err(Error::NoConvergence { iterations: 1, .. })), "{r:?}");
    }

    #[test]
    fn solves_are_deterministic() {
        let m = metric(MetricPreset::ConformalExp, default_conformal(), 17);
        let f = BoundaryData::from_fn(*m.grid(), |x, y| 0.05 * (3.0 * x + y).sin()).unwrap();
        let a = solve_bvp(&m, &f, &SolverOptions::default()).unwrap();
        let b = solve_bvp(&m, &f, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    fn mms_error(n: usize) -> f64 {
        let m = metric(MetricPreset::DiagPoly, default_conformal(), n);
        let exact = ScalarFn::parse("0.03*sin(pi*x1)*cos(x2) + 0.01*x1*x2").unwrap();
        let s = manufactured_source(&m, &exact).unwrap();
        let g = *m.grid();
        let f = BoundaryData::from_fn(g, |x, y| exact.eval(x, y)).unwrap();
        let (u, report) = solve_bvp_detailed(&m, &f, Some(&s), &SolverOptions::default().with_tol(1e-12)).unwrap();
        assert!(report.has_quadratic_phase(0.1));
        u.sub(&ScalarField::from_fn(g, |x, y| exact.eval(x, y))).max_abs()
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let rate = (mms_error(17) / mms_error(33)).log2();
        assert!((1.7..=2.3).contains(&rate), "rate {rate}");
    }
}
