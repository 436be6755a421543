//! Linearizations of the minimal surface equation at `u = 0`.
//!
//! Under `c_1 = c_2 = 0` the first linearization is the advection-diffusion
//! operator `L v = −Δ_ĝ v + X·∇v` with `X^j = (1−n)/(2c_0) ĝ^{ij} ∂_i c_0`.
//! Higher linearizations solve `L` with product sources built from lower ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::geometry::{d1, d12, d2, div_hat, laplace_beltrami_hat, partials};
use crate::grid::{Gamma, Grid};
use crate::linalg::{FactoredOperator, StencilOperator};
use crate::metric::{ConformalFactor, SampledMetric};
use crate::mse::{solve_bvp, BoundaryData, SolverOptions};

/// Coefficients of the first linearization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvectionOperatorSpec {
    pub x: VectorField,
    /// `(n−1)/(2c_0) ∂_t² c(x', 0)`; zero under the standing hypotheses.
    pub zeroth_order: ScalarField,
}

impl AdvectionOperatorSpec {
    pub fn from_metric(metric: &SampledMetric) -> Self {
        let g = *metric.grid();
        let nm1 = (metric.dim() - 1) as f64;
        let mut x = VectorField::zeros(g);
        let mut z = ScalarField::zeros(g);
        for k in 0..g.len() {
            let c0 = metric.ck(k, 0);
            let xk = metric.node(k).raise(metric.dck(k, 0));
            x.x1.values_mut()[k] = -nm1 / (2.0 * c0) * xk[0];
            x.x2.values_mut()[k] = -nm1 / (2.0 * c0) * xk[1];
            z.values_mut()[k] = nm1 / (2.0 * c0) * metric.ck(k, 2);
        }
        AdvectionOperatorSpec { x, zeroth_order: z }
    }

    /// `−Δ_ĝ + X·∇ + z` as a 9-point operator.
    pub fn stencil(&self, metric: &SampledMetric) -> StencilOperator {
        StencilOperator::from_coefficients(*metric.grid(), |k| {
            let geo = metric.node(k);
            let xk = self.x.at(k);
            [
                -geo.ginv[0],
                -geo.ginv[1],
                -geo.ginv[2],
                geo.gamma_trace[0] + xk[0],
                geo.gamma_trace[1] + xk[1],
                self.zeroth_order.values()[k],
            ]
        })
    }
}

/// Factored first-linearization operator of one metric, reused for every
/// linearized solve.
#[derive(Clone, Debug)]
pub struct Linearization {
    metric: SampledMetric,
    advection: AdvectionOperatorSpec,
    op: FactoredOperator,
}

impl Linearization {
    pub fn new(metric: &SampledMetric) -> Result<Self> {
        let advection = AdvectionOperatorSpec::from_metric(metric);
        let op = advection.stencil(metric).factor()?;
        Ok(Linearization { metric: metric.clone(), advection, op })
    }

    pub fn metric(&self) -> &SampledMetric {
        &self.metric
    }

    pub fn advection(&self) -> &AdvectionOperatorSpec {
        &self.advection
    }

    pub fn operator(&self) -> &FactoredOperator {
        &self.op
    }

    fn grid(&self) -> Grid {
        *self.metric.grid()
    }

    /// `L v = 0`, `v = f` on `∂Ω`.
    pub fn first(&self, f: &BoundaryData) -> Result<ScalarField> {
        self.op.solve(&ScalarField::zeros(self.grid()), f.field())
    }

    /// `L w = s`, `w = 0` on `∂Ω`.
    pub fn solve_source(&self, s: &ScalarField) -> Result<ScalarField> {
        self.op.solve(s, &ScalarField::zeros(self.grid()))
    }

    /// `(n−1)/(2c_0) ∂_t^k c(x', 0)`.
    pub fn taylor_weight(&self, k: usize) -> ScalarField {
        let g = self.grid();
        let nm1 = (self.metric.dim() - 1) as f64;
        let vals = (0..g.len()).map(|q| nm1 / (2.0 * self.metric.ck(q, 0)) * self.metric.ck(q, k)).collect();
        ScalarField::from_values(g, vals).expect("finite coefficients")
    }

    /// `L w + (n−1)/(2c_0) c_3 v_k v_l = 0`, `w = 0` on `∂Ω`.
    pub fn second(&self, vk: &ScalarField, vl: &ScalarField) -> Result<ScalarField> {
        vk.same_grid(vl)?;
        let kappa = self.taylor_weight(3);
        let src = ScalarField::from_values(
            self.grid(),
            (0..self.grid().len()).map(|q| -kappa.values()[q] * (vk.values()[q] * vl.values()[q])).collect(),
        )?;
        self.solve_source(&src)
    }

    /// Third linearization from first-order fields `v` and the second-order
    /// fields `w = [w_23, w_13, w_12]`.
    pub fn third_with(&self, v: [&ScalarField; 3], w: [&ScalarField; 3]) -> Result<ScalarField> {
        let g = self.grid();
        let n = g.n();
        let k3 = self.taylor_weight(3);
        let k4 = self.taylor_weight(4);
        let mut src = ScalarField::zeros(g);
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let q = g.idx(i, j);
                let val = |f: &ScalarField| f.values()[q];
                let mut s = k3.values()[q] * (val(v[0]) * val(w[0]) + val(v[1]) * val(w[1]) + val(v[2]) * val(w[2]))
                    + k4.values()[q] * val(v[0]) * val(v[1]) * val(v[2]);
                s += 2.0
                    * (self.hess_pair(v[0], v[1], v[2], i, j)
                        + self.hess_pair(v[1], v[0], v[2], i, j)
                        + self.hess_pair(v[2], v[0], v[1], i, j));
                src.values_mut()[q] = -s;
            }
        }
        self.solve_source(&src)
    }

    /// `∇²_ĝ p(∇_ĝ a, ∇_ĝ b)` at an interior node with central differences.
    fn hess_pair(&self, p: &ScalarField, a: &ScalarField, b: &ScalarField, i: usize, j: usize) -> f64 {
        let q = self.grid().idx(i, j);
        let geo = self.metric.node(q);
        let dp = [d1(p, i, j, 0), d1(p, i, j, 1)];
        let second = [d2(p, i, j, 0), d12(p, i, j), d2(p, i, j, 1)];
        let mut hs = [0.0; 3];
        for s in 0..3 {
            hs[s] = second[s] - geo.gamma[0][s] * dp[0] - geo.gamma[1][s] * dp[1];
        }
        let ga = geo.raise([d1(a, i, j, 0), d1(a, i, j, 1)]);
        let gb = geo.raise([d1(b, i, j, 0), d1(b, i, j, 1)]);
        hs[0] * ga[0] * gb[0] + hs[1] * (ga[0] * gb[1] + ga[1] * gb[0]) + hs[2] * ga[1] * gb[1]
    }

    /// Third linearization assembled from first-order fields only.
    pub fn third(&self, v1: &ScalarField, v2: &ScalarField, v3: &ScalarField) -> Result<ScalarField> {
        let w23 = self.second(v2, v3)?;
        let w13 = self.second(v1, v3)?;
        let w12 = self.second(v1, v2)?;
        self.third_with([v1, v2, v3], [&w23, &w13, &w12])
    }
}

/// `−Δ_ĝ v + X·∇v = 0`, `v = f`.
pub fn first_lin_solve(metric: &SampledMetric, f: &BoundaryData) -> Result<ScalarField> {
    Linearization::new(metric)?.first(f)
}

/// Second linearization for `g`, or for `c̃ g` when `ctilde` is given.
pub fn second_lin_solve(
    metric: &SampledMetric,
    ctilde: Option<&ConformalFactor>,
    vk: &ScalarField,
    vl: &ScalarField,
) -> Result<ScalarField> {
    match ctilde {
        None => Linearization::new(metric)?.second(vk, vl),
        Some(ct) => {
            let product = metric.spec().times(ct).sample(*metric.grid())?;
            Linearization::new(&product)?.second(vk, vl)
        }
    }
}

pub fn third_lin_solve(
    metric: &SampledMetric,
    v1: &ScalarField,
    v2: &ScalarField,
    v3: &ScalarField,
) -> Result<ScalarField> {
    Linearization::new(metric)?.third(v1, v2, v3)
}

/// Largest order handled by [`higher_lin_fd`].
pub const MAX_FD_ORDER: usize = 4;

fn mixed_difference(
    metric: &SampledMetric,
    fs: &[&BoundaryData],
    eps: f64,
    opts: &SolverOptions,
) -> Result<ScalarField> {
    let order = fs.len();
    let combos: Vec<Vec<f64>> = (0..1usize << order)
        .map(|mask| (0..order).map(|b| if mask >> b & 1 == 1 { -1.0 } else { 1.0 }).collect())
        .collect();
    let data: Vec<BoundaryData> = combos
        .iter()
        .map(|signs| {
            let terms: Vec<(f64, &BoundaryData)> = signs.iter().zip(fs).map(|(s, f)| (s * eps, *f)).collect();
            BoundaryData::combination(&terms)
        })
        .collect::<Result<_>>()?;
    for d in &data {
        if d.smallness() >= opts.delta_cap {
            return Err(Error::StencilEscape { eps, smallness: d.smallness(), cap: opts.delta_cap });
        }
    }
    let sols: Vec<Result<ScalarField>> = data.par_iter().map(|d| solve_bvp(metric, d, opts)).collect();
    let mut acc = ScalarField::zeros(*metric.grid());
    for (signs, sol) in combos.iter().zip(sols) {
        let sign: f64 = signs.iter().product();
        acc.axpy(sign, &sol?);
    }
    Ok(acc.scale(1.0 / (2.0 * eps).powi(order as i32)))
}

/// Mixed derivative `∂^N u / ∂ε_1 … ∂ε_N` at `ε = 0` of the solutions with
/// data `Σ ε_k f_k`, by the tensor central difference over `{±ε}^N`.
/// With `richardson`, returns `(4 D(ε/2) − D(ε)) / 3`.
pub fn higher_lin_fd(
    metric: &SampledMetric,
    fs: &[&BoundaryData],
    eps: f64,
    richardson: bool,
    opts: &SolverOptions,
) -> Result<ScalarField> {
    if fs.is_empty() || fs.len() > MAX_FD_ORDER {
        return Err(Error::InvalidArgument(format!(
            "finite-difference linearization supports orders 1..={MAX_FD_ORDER}, got {}",
            fs.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let coarse = mixed_difference(metric, fs, eps, opts)?;
    if !richardson {
        return Ok(coarse);
    }
    let fine = mixed_difference(metric, fs, 0.5 * eps, opts)?;
    Ok(fine.scale(4.0 / 3.0).sub(&coarse.scale(1.0 / 3.0)))
}

/// `(u_{εf} − u_0) / ε`.
pub fn fd_first_one_sided(
    metric: &SampledMetric,
    f: &BoundaryData,
    eps: f64,
    opts: &SolverOptions,
) -> Result<ScalarField> {
    let d = f.scaled(eps);
    if d.smallness() >= opts.delta_cap {
        return Err(Error::StencilEscape { eps, smallness: d.smallness(), cap: opts.delta_cap });
    }
    let u = solve_bvp(metric, &d, opts)?;
    let u0 = solve_bvp(metric, &BoundaryData::zeros(*metric.grid()), opts)?;
    Ok(u.sub(&u0).scale(1.0 / eps))
}

/// `div_ĝ X` for the advection field, from the closed-form derivatives of `c_0`:
/// `(1−n)/(2c_0) (−|∇_ĝ c_0|²/c_0 + ∂_j ĝ^{ij} ∂_i c_0 + ĝ^{ij} ∂_{ij} c_0 + ĝ^{ij} ∂_i c_0 Γ̂^k_{jk})`.
pub fn adjoint_potential(metric: &SampledMetric) -> ScalarField {
    let g = *metric.grid();
    let nm1 = (metric.dim() - 1) as f64;
    let vals = (0..g.len())
        .map(|k| {
            let geo = metric.node(k);
            let c0 = metric.ck(k, 0);
            let dc = metric.dck(k, 0);
            let hc = metric.hess_c0(k);
            let grad_sq = geo.inner_inv(dc, dc);
            let div_term = geo.div_ginv[0] * dc[0] + geo.div_ginv[1] * dc[1];
            let hess_term = geo.ginv[0] * hc[0] + 2.0 * geo.ginv[1] * hc[1] + geo.ginv[2] * hc[2];
            let gamma_term = geo.inner_inv(dc, geo.gamma_contract);
            -nm1 / (2.0 * c0) * (-grad_sq / c0 + div_term + hess_term + gamma_term)
        })
        .collect();
    ScalarField::from_values(g, vals).expect("finite metric")
}

/// Formal adjoint of `L` with respect to `dV_ĝ`: `Δ_ĝ v + X·∇v + q v`.
#[derive(Clone, Debug)]
pub struct AdjointSolver {
    op: FactoredOperator,
    potential: ScalarField,
}

impl AdjointSolver {
    pub fn new(metric: &SampledMetric) -> Result<Self> {
        let adv = AdvectionOperatorSpec::from_metric(metric);
        let q = adjoint_potential(metric);
        let op = StencilOperator::from_coefficients(*metric.grid(), |k| {
            let geo = metric.node(k);
            let xk = adv.x.at(k);
            [
                geo.ginv[0],
                geo.ginv[1],
                geo.ginv[2],
                -geo.gamma_trace[0] + xk[0],
                -geo.gamma_trace[1] + xk[1],
                q.values()[k],
            ]
        })
        .factor()?;
        Ok(AdjointSolver { op, potential: q })
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn operator(&self) -> &StencilOperator {
        self.op.operator()
    }

    pub fn solve(&self, trace: &BoundaryData) -> Result<ScalarField> {
        self.op.solve(&ScalarField::zeros(*trace.grid()), trace.field())
    }
}

/// Attempts made by [`adjoint_special_solution`] before giving up.
pub const ADJOINT_ATTEMPTS: usize = 9;

/// Smooth bump `exp(1 − 1/(1 − r²))` on `|r| < 1`.
pub fn smooth_bump(r: f64) -> f64 {
    if r.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

/// Boundary trace number `attempt` for adjoint solutions: smooth positive
/// traces on the full boundary, or bumps inside a partial `Γ`.
pub fn adjoint_trace(grid: Grid, gamma: Gamma, attempt: usize) -> Result<BoundaryData> {
    match gamma.interval(&grid) {
        None => {
            if attempt == 0 {
                return BoundaryData::from_fn(grid, |_, _| 1.0);
            }
            let a = attempt as f64;
            let theta = 0.9 * a;
            BoundaryData::from_fn(grid, move |x, y| {
                (0.6 * (a * std::f64::consts::PI * (x * theta.cos() + y * theta.sin()) + 0.3 * a).cos()).exp()
            })
        }
        Some((side, s0, s1)) => {
            const CENTERS: [f64; ADJOINT_ATTEMPTS] = [0.5, 0.35, 0.65, 0.25, 0.75, 0.45, 0.55, 0.3, 0.7];
            let buffer = crate::grid::GAMMA_BUFFER as f64 * grid.h();
            let (lo, hi) = (s0 + buffer, s1 - buffer);
            let center = lo + CENTERS[attempt % ADJOINT_ATTEMPTS] * (hi - lo);
            let width = (0.45 * (hi - lo) * (1.0 - 0.04 * (attempt / ADJOINT_ATTEMPTS) as f64))
                .min(center - lo)
                .min(hi - center);
            BoundaryData::restricted(grid, gamma, move |x, y| {
                let s = match side {
                    crate::grid::Side::Bottom | crate::grid::Side::Top => x,
                    _ => y,
                };
                smooth_bump((s - center) / width)
            })
        }
    }
}

/// Adjoint solution `v0` with `|v0(x0)| ≥ 1e-3 ‖v0‖∞`, trying up to
/// [`ADJOINT_ATTEMPTS`] boundary traces.
pub fn adjoint_special_solution(metric: &SampledMetric, x0: usize, gamma: Gamma) -> Result<ScalarField> {
    let g = *metric.grid();
    let (i, j) = g.ij(x0);
    if x0 >= g.len() || g.is_boundary(i, j) {
        return Err(Error::InvalidArgument(format!("x0 = {x0} is not an interior node")));
    }
    let solver = AdjointSolver::new(metric)?;
    let mut seen = Vec::new();
    for attempt in 0..ADJOINT_ATTEMPTS {
        let v0 = solver.solve(&adjoint_trace(g, gamma, attempt)?)?;
        let at = v0.values()[x0];
        if at.abs() >= 1e-3 * v0.max_abs() && at != 0.0 {
            return Ok(v0);
        }
        seen.push(at);
    }
    Err(Error::AdjointConstruction { attempts: ADJOINT_ATTEMPTS, values: seen })
}

/// Magnetic form of the advection operator: `A = iX/2` (stored through its
/// real factor `X/2`) and `q = ¼ ĝ(X, X) − ½ div_ĝ X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagneticCoeffs {
    /// `A` divided by `i`.
    pub a: VectorField,
    pub a_is_imaginary: bool,
    pub q: ScalarField,
}

pub fn advection_to_magnetic(x: &VectorField, metric: &SampledMetric) -> Result<MagneticCoeffs> {
    let div = div_hat(x, metric)?;
    let g = *x.grid();
    let q = ScalarField::from_values(
        g,
        (0..g.len())
            .map(|k| {
                let xk = x.at(k);
                0.25 * metric.node(k).inner(xk, xk) - 0.5 * div.values()[k]
            })
            .collect(),
    )?;
    Ok(MagneticCoeffs { a: x.scale(0.5), a_is_imaginary: true, q })
}

/// `L_{A,q} u = −Δ_ĝ u − 2i ⟨A, ∇u⟩ − i (div_ĝ A) u + ĝ(A, A) u + q u`,
/// evaluated for `A = i a` with real `a`; the result is real.
pub fn magnetic_apply(coeffs: &MagneticCoeffs, u: &ScalarField, metric: &SampledMetric) -> Result<ScalarField> {
    if !coeffs.a_is_imaginary {
        return Err(Error::InvalidArgument("only imaginary magnetic potentials are supported".into()));
    }
    let lap = laplace_beltrami_hat(u, metric)?;
    let [p1, p2] = partials(u);
    let div_a = div_hat(&coeffs.a, metric)?;
    let g = *u.grid();
    let vals = (0..g.len())
        .map(|k| {
            let a = coeffs.a.at(k);
            // −2i⟨ia, ∇u⟩ = 2 a·∇u,  −i div(ia) = div a,  ĝ(ia, ia) = −ĝ(a, a)
            -lap.values()[k] + 2.0 * (a[0] * p1.values()[k] + a[1] * p2.values()[k]) + div_a.values()[k] * u.values()[k]
                - metric.node(k).inner(a, a) * u.values()[k]
                + coeffs.q.values()[k] * u.values()[k]
        })
        .collect();
    ScalarField::from_values(g, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarFn;
    use crate::grid::Side;
    use crate::metric::{default_conformal, MetricPreset, MetricSpec};

    fn sampled(p: MetricPreset, c: ConformalFactor, n: usize) -> SampledMetric {
        MetricSpec::preset(p, c).sample(Grid::new(n).unwrap()).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let m = sampled(MetricPreset::DiagPoly, default_conformal(), 17);
        let v = first_lin_solve(&m, &BoundaryData::zeros(*m.grid())).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn constant_surface_factor_gives_harmonic_extension() {
        let c = ConformalFactor::new(ScalarFn::constant(2.0), vec![(3, ScalarFn::constant(1.0))]).unwrap();
        let m = sampled(MetricPreset::Euclidean, c, 17);
        let f = BoundaryData::from_fn(*m.grid(), |x, _| x).unwrap();
        let v = first_lin_solve(&m, &f).unwrap();
        let x1 = ScalarField::from_fn(*m.grid(), |x, _| x);
        assert!(v.sub(&x1).max_abs() < 1e-12);
    }

    #[test]
    fn standing_hypotheses_kill_zeroth_order_term() {
        let m = sampled(MetricPreset::ConformalExp, default_conformal(), 17);
        let adv = AdvectionOperatorSpec::from_metric(&m);
        assert_eq!(adv.zeroth_order.max_abs(), 0.0);
        assert!(adv.x.max_abs() > 0.0);
    }

    #[test]
    fn second_linearization_vanishes_without_cubic_term() {
        let c = ConformalFactor::new(ScalarFn::parse("1 + 0.3*x1").unwrap(), vec![]).unwrap();
        let m = sampled(MetricPreset::DiagPoly, c, 17);
        let lin = Linearization::new(&m).unwrap();
        let v = lin.first(&BoundaryData::from_fn(*m.grid(), |x, y| x - y * y).unwrap()).unwrap();
        assert_eq!(lin.second(&v, &v).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn second_linearization_is_symmetric() {
        let m = sampled(MetricPreset::ConformalExp, default_conformal(), 17);
        let lin = Linearization::new(&m).unwrap();
        let g = *m.grid();
        let vk = lin.first(&BoundaryData::from_fn(g, |x, y| (x + 2.0 * y).sin()).unwrap()).unwrap();
        let vl = lin.first(&BoundaryData::from_fn(g, |x, y| x * y + 0.5).unwrap()).unwrap();
        let a = lin.second(&vk, &vl).unwrap();
        let b = lin.second(&vl, &vk).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn product_metric_adds_cubic_terms() {
        let m = sampled(MetricPreset::Euclidean, default_conformal(), 17);
        let ct = ConformalFactor::new(ScalarFn::constant(1.0), vec![(3, ScalarFn::parse("x1*x2").unwrap())]).unwrap();
        let g = *m.grid();
        let lin = Linearization::new(&m).unwrap();
        let v = lin.first(&BoundaryData::from_fn(g, |x, y| 1.0 + x - y).unwrap()).unwrap();
        let w = second_lin_solve(&m, None, &v, &v).unwrap();
        let wt = second_lin_solve(&m, Some(&ct), &v, &v).unwrap();
        // w̃ − w solves L d + (n−1)/2 c̃_3 v² = 0
        let src = ScalarField::from_fn(g, |x, y| -x * y).mul(&v).mul(&v);
        let d = lin.solve_source(&src).unwrap();
        assert!(wt.sub(&w).sub(&d).max_abs() < 1e-12);
    }

    #[test]
    fn fd_rejects_escaping_stencil_and_bad_order() {
        let m = sampled(MetricPreset::Euclidean, default_conformal(), 9);
        let f = BoundaryData::from_fn(*m.grid(), |_, _| 1.0).unwrap();
        let opts = SolverOptions::default();
        assert!(matches!(higher_lin_fd(&m, &[&f, &f], 0.06, false, &opts), Err(Error::StencilEscape { .. })));
        assert!(higher_lin_fd(&m, &[&f; 5], 0.001, false, &opts).is_err());
    }

    #[test]
    fn fd_order_one_matches_first_linearization() {
        let m = sampled(MetricPreset::DiagPoly, default_conformal(), 17);
        let f = BoundaryData::from_fn(*m.grid(), |x, y| (x - 2.0 * y).cos()).unwrap();
        let opts = SolverOptions::default().with_tol(1e-13);
        let fd = higher_lin_fd(&m, &[&f], 1e-3, false, &opts).unwrap();
        let v = first_lin_solve(&m, &f).unwrap();
        assert!(fd.sub(&v).max_abs() < 1e-6);
    }

    #[test]
    fn third_derivative_vanishes_without_higher_terms() {
        let c = ConformalFactor::new(ScalarFn::parse("1 + 0.2*x1").unwrap(), vec![]).unwrap();
        let m = sampled(MetricPreset::Euclidean, c, 17);
        let f = BoundaryData::from_fn(*m.grid(), |_, _| 1.0).unwrap();
        let opts = SolverOptions::default().with_tol(1e-13);
        let d3 = higher_lin_fd(&m, &[&f, &f, &f], 0.02, false, &opts).unwrap();
        assert!(d3.max_abs() < 1e-5, "{}", d3.max_abs());
    }

    #[test]
    fn adjoint_with_constant_factor_is_constant() {
        let c = ConformalFactor::new(ScalarFn::constant(1.7), vec![(3, ScalarFn::constant(1.0))]).unwrap();
        let m = sampled(MetricPreset::DiagPoly, c, 17);
        assert_eq!(adjoint_potential(&m).max_abs(), 0.0);
        let v0 = adjoint_special_solution(&m, m.grid().center(), Gamma::All).unwrap();
        assert!(v0.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn partial_adjoint_vanishes_off_gamma() {
        let m = sampled(MetricPreset::ConformalExp, default_conformal(), 33);
        let g = *m.grid();
        let gamma = Gamma::Side(Side::Left);
        let v0 = adjoint_special_solution(&m, g.center(), gamma).unwrap();
        for k in g.boundary_nodes() {
            if !gamma.contains(&g, k) {
                assert_eq!(v0.values()[k].to_bits(), 0.0f64.to_bits());
            }
        }
        assert!(v0.values()[g.center()].abs() >= 1e-3 * v0.max_abs());
    }

    #[test]
    fn adjoint_rejects_boundary_point() {
        let m = sampled(MetricPreset::Euclidean, default_conformal(), 9);
        assert!(adjoint_special_solution(&m, 0, Gamma::All).is_err());
    }

    #[test]
    fn magnetic_coefficients_for_constant_field() {
        let m = sampled(MetricPreset::Euclidean, default_conformal(), 9);
        let g = *m.grid();
        let zero = advection_to_magnetic(&VectorField::zeros(g), &m).unwrap();
        assert_eq!(zero.q.max_abs(), 0.0);
        assert_eq!(zero.a.max_abs(), 0.0);
        let x = VectorField::from_fn(g, |_, _| [1.0, 0.0]);
        let mc = advection_to_magnetic(&x, &m).unwrap();
        assert!(mc.q.values().iter().all(|v| (v - 0.25).abs() < 1e-14));
    }

    #[test]
    fn first_linearization_is_superposable() {
        let m = sampled(MetricPreset::DiagPoly, default_conformal(), 17);
        let g = *m.grid();
        let lin = Linearization::new(&m).unwrap();
        let f1 = BoundaryData::from_fn(g, |x, y| (3.0 * x).sin() + y).unwrap();
        let f2 = BoundaryData::from_fn(g, |x, y| x * y).unwrap();
        let comb = BoundaryData::combination(&[(2.0, &f1), (-0.5, &f2)]).unwrap();
        let lhs = lin.first(&comb).unwrap();
        let rhs = lin.first(&f1).unwrap().scale(2.0).sub(&lin.first(&f2).unwrap().scale(0.5));
        assert!(lhs.sub(&rhs).max_abs() < 1e-12);
    }
}
