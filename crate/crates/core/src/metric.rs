//! Metrics `g = c(x', t) (ĝ(x') ⊕ 1)` and their per-grid samples.
//!
//! The conformal factor is stored as its Taylor table in the transversal
//! variable `t = x_n`: `c(x', t) = Σ_k c_k(x') t^k / k!`, which is an exact
//! closed form (a polynomial in `t`) rather than a truncation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::expr::ScalarFn;
use crate::field::ScalarField;
use crate::grid::Grid;

/// Default Taylor depth of a conformal factor table.
pub const DEFAULT_K_MAX: usize = 6;

/// Tolerance for the vanishing of `c_1`, `c_2` on sampled nodes.
const FLAT_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ConformalFactor {
    coeffs: Vec<ScalarFn>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, b| a * b as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

impl ConformalFactor {
    /// `c_0(x') + Σ t^k c_k(x')/k!` for the listed `(k, c_k)` with `k ≥ 3`.
    pub fn new(c0: ScalarFn, higher: Vec<(usize, ScalarFn)>) -> Result<Self> {
        let kmax = higher.iter().map(|(k, _)| *k).max().unwrap_or(0).max(DEFAULT_K_MAX);
        let mut coeffs = vec![ScalarFn::constant(0.0); kmax + 1];
        coeffs[0] = c0;
        for (k, f) in higher {
            if k <= 2 {
                return Err(Error::InvalidArgument(format!(
                    "c_{k} must vanish: only c_0 and orders >= 3 may be given"
                )));
            }
            coeffs[k] = f;
        }
        Ok(ConformalFactor { coeffs })
    }

    /// Full table `c_0..c_K`; `c_1`, `c_2` must be identically zero expressions
    /// (closures are checked when sampled on a grid).
    pub fn from_table(coeffs: Vec<ScalarFn>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument("empty Taylor table".into()));
        }
        for k in 1..coeffs.len().min(3) {
            if let ScalarFn::Expr(e) = &coeffs[k] {
                if !e.is_zero() {
                    return Err(Error::InvalidArgument(format!("c_{k} must vanish, got {e}")));
                }
            }
        }
        Ok(ConformalFactor { coeffs })
    }

    pub fn constant(v: f64) -> Self {
        ConformalFactor { coeffs: vec![ScalarFn::constant(v)] }
    }

    /// Highest stored Taylor order.
    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coefficient(&self, k: usize) -> ScalarFn {
        self.coeffs.get(k).cloned().unwrap_or_else(|| ScalarFn::constant(0.0))
    }

    pub fn coefficients(&self) -> &[ScalarFn] {
        &self.coeffs
    }

    pub fn with_coefficient(&self, k: usize, f: ScalarFn) -> Result<Self> {
        if (1..=2).contains(&k) {
            return Err(Error::InvalidOrder(k));
        }
        let mut coeffs = self.coeffs.clone();
        if coeffs.len() <= k {
            coeffs.resize(k + 1, ScalarFn::constant(0.0));
        }
        coeffs[k] = f;
        Ok(ConformalFactor { coeffs })
    }

    pub fn eval(&self, x1: f64, x2: f64, t: f64) -> f64 {
        let mut s = 0.0;
        let mut tk = 1.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            if !c.is_zero() {
                s += c.eval(x1, x2) * tk / factorial(k);
            }
            tk *= t;
        }
        s
    }

    /// `μ c` (the gauge transformation).
    pub fn scaled(&self, mu: f64) -> Self {
        ConformalFactor { coeffs: self.coeffs.iter().map(|c| c.scaled(mu)).collect() }
    }

    /// Taylor table of the product `c · other` by the Leibniz rule.
    pub fn product(&self, other: &ConformalFactor) -> Self {
        let kmax = self.k_max() + other.k_max();
        let mut coeffs = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let mut acc = ScalarFn::constant(0.0);
            for j in 0..=k {
                let (a, b) = (self.coefficient(j), other.coefficient(k - j));
                if a.is_zero() || b.is_zero() {
                    continue;
                }
                acc = acc.plus(&a.times(&b).scaled(binomial(k, j)));
            }
            coeffs.push(acc);
        }
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        ConformalFactor { coeffs }
    }
}

/// Named transversal metrics `ĝ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricPreset {
    Euclidean,
    /// `e^{2 x1} I`
    ConformalExp,
    /// `diag(1, x1² + 1)`
    DiagPoly,
}

impl MetricPreset {
    pub const ALL: [MetricPreset; 3] = [MetricPreset::Euclidean, MetricPreset::ConformalExp, MetricPreset::DiagPoly];

    pub fn name(self) -> &'static str {
        match self {
            MetricPreset::Euclidean => "euclidean",
            MetricPreset::ConformalExp => "conformal_exp",
            MetricPreset::DiagPoly => "diag_poly",
        }
    }

    fn components(self) -> [&'static str; 3] {
        match self {
            MetricPreset::Euclidean => ["1", "0", "1"],
            MetricPreset::ConformalExp => ["exp(2*x1)", "0", "exp(2*x1)"],
            MetricPreset::DiagPoly => ["1", "0", "x1^2 + 1"],
        }
    }
}

impl FromStr for MetricPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricPreset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric preset '{s}'")))
    }
}

impl fmt::Display for MetricPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The conformal factor used by every preset unless configured otherwise:
/// `c_0 = 1 + 0.2 x1 x2`, `c_3 = 1 + 0.5 x1`, `c_4 = 0.5 cos(x2)`.
pub fn default_conformal() -> ConformalFactor {
    ConformalFactor::new(
        ScalarFn::parse("1 + 0.2*x1*x2").unwrap(),
        vec![(3, ScalarFn::parse("1 + 0.5*x1").unwrap()), (4, ScalarFn::parse("0.5*cos(x2)").unwrap())],
    )
    .unwrap()
}

#[derive(Clone, Debug)]
pub struct MetricSpec {
    ghat: [ScalarFn; 3],
    conformal: ConformalFactor,
    dim: usize,
}

impl MetricSpec {
    pub fn new(g11: ScalarFn, g12: ScalarFn, g22: ScalarFn, conformal: ConformalFactor) -> Self {
        MetricSpec { ghat: [g11, g12, g22], conformal, dim: 3 }
    }

    pub fn preset(preset: MetricPreset, conformal: ConformalFactor) -> Self {
        let [a, b, c] = preset.components().map(|s| ScalarFn::parse(s).unwrap());
        Self::new(a, b, c, conformal)
    }

    pub fn euclidean(conformal: ConformalFactor) -> Self {
        Self::preset(MetricPreset::Euclidean, conformal)
    }

    /// Dimension `n` of the ambient manifold; grids are always `n - 1 = 2`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn conformal(&self) -> &ConformalFactor {
        &self.conformal
    }

    pub fn ghat(&self) -> &[ScalarFn; 3] {
        &self.ghat
    }

    pub fn with_conformal(&self, conformal: ConformalFactor) -> Self {
        MetricSpec { ghat: self.ghat.clone(), conformal, dim: self.dim }
    }

    /// Same `ĝ`, conformal factor `μ c`.
    pub fn gauge_scaled(&self, mu: f64) -> Self {
        self.with_conformal(self.conformal.scaled(mu))
    }

    /// The metric `c̃ g`, i.e. conformal factor `c · c̃`.
    pub fn times(&self, ctilde: &ConformalFactor) -> Self {
        self.with_conformal(self.conformal.product(ctilde))
    }

    /// `(ĝ_11, ĝ_12, ĝ_22)` at a point.
    pub fn ghat_at(&self, x1: f64, x2: f64) -> [f64; 3] {
        [self.ghat[0].eval(x1, x2), self.ghat[1].eval(x1, x2), self.ghat[2].eval(x1, x2)]
    }

    pub fn c_at(&self, x1: f64, x2: f64, t: f64) -> f64 {
        self.conformal.eval(x1, x2, t)
    }

    pub fn sample(&self, grid: Grid) -> Result<SampledMetric> {
        SampledMetric::new(self, grid)
    }
}

/// Inverse and determinant of a symmetric 2×2 matrix `(a, b, c)`.
#[inline]
pub fn sym_inverse(g: [f64; 3]) -> ([f64; 3], f64) {
    let det = g[0] * g[2] - g[1] * g[1];
    ([g[2] / det, -g[1] / det, g[0] / det], det)
}

/// Flat index of the symmetric pair `(i, j)` in `(11, 12, 22)` storage.
#[inline]
pub fn sym(i: usize, j: usize) -> usize {
    i + j
}

/// Christoffel symbols `Γ̂^m_{ij}` of `ĝ` on the grid.
///
/// Only `ij ∈ {11, 12, 22}` is stored; [`ChristoffelData::get`] serves `21`
/// from the `12` slot, so symmetry in the lower indices holds bitwise.
#[derive(Clone, Debug)]
pub struct ChristoffelData {
    grid: Grid,
    gamma: [[Vec<f64>; 3]; 2],
}

impl ChristoffelData {
    /// Indices are zero-based: `m, i, j ∈ {0, 1}`.
    #[inline]
    pub fn get(&self, node: usize, m: usize, i: usize, j: usize) -> f64 {
        self.gamma[m][sym(i, j)][node]
    }

    pub fn field(&self, m: usize, i: usize, j: usize) -> ScalarField {
        ScalarField::from_values(self.grid, self.gamma[m][sym(i, j)].clone()).expect("Christoffel values are finite")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Geometric quantities of `ĝ` at one node.
#[derive(Clone, Copy, Debug, Default)]
pub struct NodeGeometry {
    pub g: [f64; 3],
    pub ginv: [f64; 3],
    pub sqrt_det: f64,
    /// `∂_a ĝ_{ij}` for `a = 0, 1`.
    pub dg: [[f64; 3]; 2],
    /// `Γ̂^m_{ij}` in `(11, 12, 22)` storage.
    pub gamma: [[f64; 3]; 2],
    /// `ĝ^{ij} Γ̂^m_{ij}`
    pub gamma_trace: [f64; 2],
    /// `Γ̂^k_{jk}`
    pub gamma_contract: [f64; 2],
    /// `Σ_j ∂_j ĝ^{ij}`
    pub div_ginv: [f64; 2],
}

impl NodeGeometry {
    pub fn at_point(spec: &MetricSpec, grads: &[[ScalarFn; 2]; 3], x1: f64, x2: f64) -> Self {
        let g = spec.ghat_at(x1, x2);
        let (ginv, det) = sym_inverse(g);
        let mut dg = [[0.0; 3]; 2];
        for (c, grad) in grads.iter().enumerate() {
            for a in 0..2 {
                dg[a][c] = grad[a].eval(x1, x2);
            }
        }
        let gi = |i: usize, j: usize| ginv[sym(i, j)];
        let d = |a: usize, i: usize, j: usize| dg[a][sym(i, j)];
        let mut gamma = [[0.0; 3]; 2];
        for m in 0..2 {
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let mut s = 0.0;
                for r in 0..2 {
                    s += gi(m, r) * (d(j, i, r) + d(i, j, r) - d(r, i, j));
                }
                gamma[m][sym(i, j)] = 0.5 * s;
            }
        }
        let mut gamma_trace = [0.0; 2];
        let mut gamma_contract = [0.0; 2];
        let mut div_ginv = [0.0; 2];
        for m in 0..2 {
            gamma_trace[m] = ginv[0] * gamma[m][0] + 2.0 * ginv[1] * gamma[m][1] + ginv[2] * gamma[m][2];
            gamma_contract[m] = gamma[0][sym(m, 0)] + gamma[1][sym(m, 1)];
        }
        // ∂_a ĝ^{-1} = -ĝ^{-1} (∂_a ĝ) ĝ^{-1}
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        s -= gi(i, p) * d(j, p, q) * gi(q, j);
                    }
                }
                div_ginv[i] += s;
            }
        }
        NodeGeometry { g, ginv, sqrt_det: det.max(0.0).sqrt(), dg, gamma, gamma_trace, gamma_contract, div_ginv }
    }

    /// `ĝ^{ij} a_i b_j`
    #[inline]
    pub fn inner_inv(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.ginv[0] * a[0] * b[0] + self.ginv[1] * (a[0] * b[1] + a[1] * b[0]) + self.ginv[2] * a[1] * b[1]
    }

    /// `ĝ_{ij} X^i Y^j`
    #[inline]
    pub fn inner(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.g[0] * a[0] * b[0] + self.g[1] * (a[0] * b[1] + a[1] * b[0]) + self.g[2] * a[1] * b[1]
    }

    /// Raise a covector: `ĝ^{ij} a_j`.
    #[inline]
    pub fn raise(&self, a: [f64; 2]) -> [f64; 2] {
        [self.ginv[0] * a[0] + self.ginv[1] * a[1], self.ginv[1] * a[0] + self.ginv[2] * a[1]]
    }

    /// Lower a vector: `ĝ_{ij} X^j`.
    #[inline]
    pub fn lower(&self, x: [f64; 2]) -> [f64; 2] {
        [self.g[0] * x[0] + self.g[1] * x[1], self.g[1] * x[0] + self.g[2] * x[1]]
    }
}

/// `c`, `∂_{x'} c` and `∂_t c` at one point `(x', t)`.
#[derive(Clone, Copy, Debug)]
pub struct ConformalValues {
    pub c: f64,
    pub dc: [f64; 2],
    pub dt: f64,
}

/// A metric sampled on one grid: everything the discrete operators need.
#[derive(Clone, Debug)]
pub struct SampledMetric {
    spec: MetricSpec,
    grid: Grid,
    nodes: Vec<NodeGeometry>,
    stride: usize,
    /// `c_k(x')` per node, `stride` entries each.
    ck: Vec<f64>,
    /// `∂_a c_k(x')` per node.
    dck: Vec<[f64; 2]>,
    /// Hessian `(11, 12, 22)` of `c_0`.
    hess_c0: Vec<[f64; 3]>,
    ghat_grads: [[ScalarFn; 2]; 3],
}

impl SampledMetric {
    pub fn new(spec: &MetricSpec, grid: Grid) -> Result<Self> {
        let ghat_grads = [spec.ghat[0].gradient_fn(), spec.ghat[1].gradient_fn(), spec.ghat[2].gradient_fn()];
        let coeffs = spec.conformal.coefficients();
        let stride = coeffs.len();
        let coeff_grads: Vec<[ScalarFn; 2]> = coeffs.iter().map(|c| c.gradient_fn()).collect();
        let hess_fns = coeffs[0].hessian_fn();

        let mut nodes = Vec::with_capacity(grid.len());
        let mut ck = Vec::with_capacity(grid.len() * stride);
        let mut dck = Vec::with_capacity(grid.len() * stride);
        let mut hess_c0 = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let (x1, x2) = grid.xy(k);
            let geo = NodeGeometry::at_point(spec, &ghat_grads, x1, x2);
            let trace = geo.g[0] + geo.g[2];
            let det = geo.g[0] * geo.g[2] - geo.g[1] * geo.g[1];
            if !(det > 0.0 && trace > 0.0) {
                return Err(Error::MetricInvalid {
                    node: k,
                    reason: format!("ĝ not positive definite (det {det}, trace {trace})"),
                });
            }
            for (c, grad) in coeffs.iter().zip(&coeff_grads) {
                if c.is_zero() {
                    ck.push(0.0);
                    dck.push([0.0, 0.0]);
                } else {
                    ck.push(c.eval(x1, x2));
                    dck.push([grad[0].eval(x1, x2), grad[1].eval(x1, x2)]);
                }
            }
            let base = k * stride;
            let c0 = ck[base];
            if !(c0 > 0.0) {
                return Err(Error::MetricInvalid { node: k, reason: format!("c(x', 0) = {c0} is not positive") });
            }
            for order in 1..stride.min(3) {
                if ck[base + order].abs() > FLAT_TOL * c0.max(1.0) {
                    return Err(Error::MetricInvalid {
                        node: k,
                        reason: format!("∂_t^{order} c(x', 0) = {} does not vanish", ck[base + order]),
                    });
                }
            }
            hess_c0.push([hess_fns[0].eval(x1, x2), hess_fns[1].eval(x1, x2), hess_fns[2].eval(x1, x2)]);
            let all_finite = geo.g.iter().chain(&geo.gamma[0]).chain(&geo.gamma[1]).all(|v| v.is_finite())
                && ck[base..].iter().all(|v| v.is_finite())
                && hess_c0[k].iter().all(|v| v.is_finite());
            if !all_finite {
                return Err(Error::NonFinite { node: k });
            }
            nodes.push(geo);
        }
        Ok(SampledMetric { spec: spec.clone(), grid, nodes, stride, ck, dck, hess_c0, ghat_grads })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    #[inline]
    pub fn node(&self, k: usize) -> &NodeGeometry {
        &self.nodes[k]
    }

    /// `ĝ` quantities at an arbitrary point (used for half-node fluxes).
    pub fn geometry_at(&self, x1: f64, x2: f64) -> NodeGeometry {
        NodeGeometry::at_point(&self.spec, &self.ghat_grads, x1, x2)
    }

    /// Taylor coefficient `c_k(x')` at a node (zero beyond the table).
    #[inline]
    pub fn ck(&self, node: usize, k: usize) -> f64 {
        if k < self.stride {
            self.ck[node * self.stride + k]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn dck(&self, node: usize, k: usize) -> [f64; 2] {
        if k < self.stride {
            self.dck[node * self.stride + k]
        } else {
            [0.0, 0.0]
        }
    }

    #[inline]
    pub fn hess_c0(&self, node: usize) -> [f64; 3] {
        self.hess_c0[node]
    }

    /// `c`, `∂_{x'}c` and `∂_t c` at `(x'_node, t)`.
    #[inline]
    pub fn conformal_at(&self, node: usize, t: f64) -> ConformalValues {
        let base = node * self.stride;
        let mut c = 0.0;
        let mut dc = [0.0, 0.0];
        let mut dt = 0.0;
        // tk = t^k / k!
        let mut tk = 1.0;
        let mut prev = 0.0;
        for k in 0..self.stride {
            let a = self.ck[base + k];
            let g = self.dck[base + k];
            c += a * tk;
            dc[0] += g[0] * tk;
            dc[1] += g[1] * tk;
            if k > 0 {
                dt += a * prev;
            }
            prev = tk;
            tk *= t / (k + 1) as f64;
        }
        ConformalValues { c, dc, dt }
    }

    pub fn christoffel(&self) -> ChristoffelData {
        let mut gamma: [[Vec<f64>; 3]; 2] = Default::default();
        for m in 0..2 {
            for s in 0..3 {
                gamma[m][s] = self.nodes.iter().map(|n| n.gamma[m][s]).collect();
            }
        }
        ChristoffelData { grid: self.grid, gamma }
    }

    /// `√|ĝ|` as a field.
    pub fn sqrt_det_field(&self) -> ScalarField {
        ScalarField::from_values(self.grid, self.nodes.iter().map(|n| n.sqrt_det).collect()).expect("finite metric")
    }

    /// `c(x', 0)` as a field.
    pub fn c0_field(&self) -> ScalarField {
        ScalarField::from_values(self.grid, (0..self.grid.len()).map(|k| self.ck(k, 0)).collect())
            .expect("finite metric")
    }
}
