//! Sparse linear algebra for 9-point stencil systems.
//!
//! Interior unknowns in natural ordering give a banded matrix with
//! `kl = ku = n - 1`; up to [`DIRECT_MAX_NODES`] nodes per side the system is
//! factored by banded LU with partial pivoting, beyond that BiCGSTAB with a
//! Jacobi preconditioner is used.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid;

/// Largest grid side solved by direct factorization.
pub const DIRECT_MAX_NODES: usize = 257;

/// Relative residual target of the iterative solver.
pub const ITERATIVE_RTOL: f64 = 1e-12;

/// Pivot ratio below which a factorization is reported singular.
const SINGULAR_RATIO: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from rows of `(column, value)` pairs; duplicates are summed.
    pub fn from_rows(n: usize, rows: impl IntoIterator<Item = Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let start = col_idx.len();
            for (c, v) in row {
                if col_idx.len() > start && *col_idx.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        assert_eq!(row_ptr.len(), n + 1, "row count mismatch");
        CsrMatrix { n, row_ptr, col_idx, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |e| e.1)).collect()
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (c, _) in self.row(i) {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }
}

/// Banded LU factorization with partial pivoting (LAPACK `gbtrf` layout).
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let (kl, ku) = a.bandwidths();
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandLu { n, kl, ku, ldab, ab: vec![0.0; ldab * n], ipiv: vec![0; n] };
        for i in 0..n {
            for (j, v) in a.row(i) {
                let p = lu.at(i, j);
                lu.ab[p] += v;
            }
        }
        lu.factor_in_place()?;
        Ok(lu)
    }

    fn factor_in_place(&mut self) -> Result<()> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let mut ju = 0;
        let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut jp = 0;
            let mut best = self.ab[col].abs();
            for r in 1..=km {
                let v = self.ab[col + r].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { estimate: f64::INFINITY });
            }
            pmax = pmax.max(best);
            pmin = pmin.min(best);
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = c * ldab + kv + j - c;
                    self.ab.swap(a, a + jp);
                }
            }
            if km > 0 {
                let inv = 1.0 / self.ab[col];
                for r in 1..=km {
                    self.ab[col + r] *= inv;
                }
                for c in j + 1..=ju {
                    let base = c * ldab + kv + j - c;
                    let ajc = self.ab[base];
                    if ajc == 0.0 {
                        continue;
                    }
                    for r in 1..=km {
                        self.ab[base + r] -= self.ab[col + r] * ajc;
                    }
                }
            }
        }
        if pmin / pmax < SINGULAR_RATIO {
            return Err(Error::Singular { estimate: pmax / pmin });
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        for j in 0..n {
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                let col = j * ldab + kv;
                for r in 1..=km {
                    b[j + r] -= self.ab[col + r] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * ldab + kv;
            b[j] /= self.ab[col];
            let bj = b[j];
            if bj == 0.0 {
                continue;
            }
            let top = j.saturating_sub(kv);
            for i in top..j {
                b[i] -= self.ab[col + i - j] * bj;
            }
        }
    }
}

/// Right-preconditioned BiCGSTAB with Jacobi scaling.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n();
    let inv_d: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rel = 1.0;
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_d[i] * p[i];
        }
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() / bnorm < rtol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        for i in 0..n {
            z[i] = inv_d[i] * s[i];
        }
        a.matvec(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel < rtol {
            return Ok(x);
        }
        if !rel.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::IterativeStall { iterations: max_iter, residual: rel })
}

#[derive(Clone, Debug)]
pub enum LinearSolver {
    Direct(BandLu),
    Iterative(CsrMatrix),
}

impl LinearSolver {
    /// Direct factorization up to [`DIRECT_MAX_NODES`] nodes per side.
    pub fn new(a: CsrMatrix, grid: &Grid) -> Result<Self> {
        if grid.n() <= DIRECT_MAX_NODES {
            Ok(LinearSolver::Direct(BandLu::factor(&a)?))
        } else {
            Ok(LinearSolver::Iterative(a))
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            LinearSolver::Direct(lu) => {
                let mut x = b.to_vec();
                lu.solve_in_place(&mut x);
                Ok(x)
            }
            LinearSolver::Iterative(a) => bicgstab(a, b, ITERATIVE_RTOL, 20 * a.n().max(100)),
        }
    }
}

/// Weight index of the neighbour `(di, dj)` in a 3×3 patch.
#[inline]
pub const fn patch(di: isize, dj: isize) -> usize {
    ((di + 1) + 3 * (dj + 1)) as usize
}

/// Linear 9-point operator acting on interior nodes.
///
/// Each interior node carries the weights of its 3×3 patch; boundary
/// neighbours enter a solve through the prescribed boundary values.
#[derive(Clone, Debug)]
pub struct StencilOperator {
    grid: Grid,
    weights: Vec<[f64; 9]>,
}

impl StencilOperator {
    pub fn zeros(grid: Grid) -> Self {
        StencilOperator { grid, weights: vec![[0.0; 9]; grid.interior_len()] }
    }

    /// `a11 ∂₁₁ + 2 a12 ∂₁₂ + a22 ∂₂₂ + b1 ∂₁ + b2 ∂₂ + c0`, central differences.
    /// `coeffs(node) = [a11, a12, a22, b1, b2, c0]`.
    pub fn from_coefficients(grid: Grid, coeffs: impl Fn(usize) -> [f64; 6]) -> Self {
        let h = grid.h();
        let (ih, ih2) = (1.0 / h, 1.0 / (h * h));
        let mut op = Self::zeros(grid);
        for r in 0..grid.interior_len() {
            let [a11, a12, a22, b1, b2, c0] = coeffs(grid.interior_node(r));
            let w = &mut op.weights[r];
            w[patch(0, 0)] = -2.0 * (a11 + a22) * ih2 + c0;
            w[patch(1, 0)] = a11 * ih2 + 0.5 * b1 * ih;
            w[patch(-1, 0)] = a11 * ih2 - 0.5 * b1 * ih;
            w[patch(0, 1)] = a22 * ih2 + 0.5 * b2 * ih;
            w[patch(0, -1)] = a22 * ih2 - 0.5 * b2 * ih;
            w[patch(1, 1)] = 0.5 * a12 * ih2;
            w[patch(-1, -1)] = 0.5 * a12 * ih2;
            w[patch(-1, 1)] = -0.5 * a12 * ih2;
            w[patch(1, -1)] = -0.5 * a12 * ih2;
        }
        op
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Weights of the `r`-th interior unknown.
    pub fn weights(&self, r: usize) -> &[f64; 9] {
        &self.weights[r]
    }

    pub fn weights_mut(&mut self, r: usize) -> &mut [f64; 9] {
        &mut self.weights[r]
    }

    /// `(L v)` at interior nodes; boundary entries are zero.
    pub fn apply(&self, v: &ScalarField) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        for r in 0..g.interior_len() {
            let k = g.interior_node(r);
            let (i, j) = g.ij(k);
            let w = &self.weights[r];
            let mut s = 0.0;
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    s += w[patch(di, dj)] * v.at((i as isize + di) as usize, (j as isize + dj) as usize);
                }
            }
            out.values_mut()[k] = s;
        }
        out
    }

    pub fn assemble(&self) -> CsrMatrix {
        let g = self.grid;
        let n = g.n();
        let rows = (0..g.interior_len()).map(|r| {
            let (i, j) = g.ij(g.interior_node(r));
            let w = &self.weights[r];
            let mut row = Vec::with_capacity(9);
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let (a, b) = ((i as isize + di) as usize, (j as isize + dj) as usize);
                    if a == 0 || b == 0 || a == n - 1 || b == n - 1 {
                        continue;
                    }
                    row.push((g.interior_index(a, b), w[patch(di, dj)]));
                }
            }
            row
        });
        CsrMatrix::from_rows(g.interior_len(), rows)
    }

    pub fn factor(&self) -> Result<FactoredOperator> {
        Ok(FactoredOperator { op: self.clone(), solver: LinearSolver::new(self.assemble(), &self.grid)? })
    }
}

/// A factored [`StencilOperator`], reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct FactoredOperator {
    op: StencilOperator,
    solver: LinearSolver,
}

impl FactoredOperator {
    pub fn operator(&self) -> &StencilOperator {
        &self.op
    }

    /// Solve `L v = rhs` in the interior with `v = boundary` on `∂Ω`.
    /// Only the interior of `rhs` and the boundary of `boundary` are read.
    pub fn solve(&self, rhs: &ScalarField, boundary: &ScalarField) -> Result<ScalarField> {
        let g = self.op.grid;
        rhs.same_grid(boundary)?;
        if *rhs.grid() != g {
            return Err(Error::GridMismatch { left: rhs.grid().n(), right: g.n() });
        }
        let lifted = self.op.apply(&boundary.boundary_only());
        let b: Vec<f64> = (0..g.interior_len())
            .map(|r| {
                let k = g.interior_node(r);
                rhs.values()[k] - lifted.values()[k]
            })
            .collect();
        let x = self.solver.solve(&b)?;
        let mut out = boundary.boundary_only();
        for (r, xv) in x.into_iter().enumerate() {
            out.values_mut()[g.interior_node(r)] = xv;
        }
        out.check_finite()?;
        Ok(out)
    }
}
