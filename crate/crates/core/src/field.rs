//! Node-valued fields on a [`Grid`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        ScalarField { grid, values: vec![v; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.xy(k);
                f(x, y)
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("{} values for a grid of {} nodes", values.len(), grid.len())));
        }
        let f = ScalarField { grid, values };
        f.check_finite()?;
        Ok(f)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(node) => Err(Error::NonFinite { node }),
            None => Ok(()),
        }
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch { left: self.grid.n(), right: other.grid.n() });
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude over nodes at least `margin` nodes away from the boundary.
    pub fn max_abs_inner(&self, margin: usize) -> f64 {
        let n = self.grid.n();
        let mut m: f64 = 0.0;
        for j in margin..n - margin {
            for i in margin..n - margin {
                m = m.max(self.at(i, j).abs());
            }
        }
        m
    }

    /// Discrete L² norm over interior nodes, weighted by `h²`.
    pub fn l2_interior(&self) -> f64 {
        let n = self.grid.n();
        let h = self.grid.h();
        let mut s = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                s += self.at(i, j).powi(2);
            }
        }
        (s * h * h).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|v| s * v)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        debug_assert_eq!(self.grid, x.grid);
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    /// Copy with every boundary value set to zero.
    pub fn interior_only(&self) -> ScalarField {
        let mut out = self.clone();
        for k in self.grid.boundary_nodes() {
            out.values[k] = 0.0;
        }
        out
    }

    /// Copy with every interior value set to zero.
    pub fn boundary_only(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for k in self.grid.boundary_nodes() {
            out.values[k] = self.values[k];
        }
        out
    }
}

/// Contravariant vector field `(X¹, X²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub x1: ScalarField,
    pub x2: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField { x1: ScalarField::zeros(grid), x2: ScalarField::zeros(grid) }
    }

    pub fn new(x1: ScalarField, x2: ScalarField) -> Result<Self> {
        x1.same_grid(&x2)?;
        Ok(VectorField { x1, x2 })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        VectorField {
            x1: ScalarField::from_fn(grid, |x, y| f(x, y)[0]),
            x2: ScalarField::from_fn(grid, |x, y| f(x, y)[1]),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.x1.grid()
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.x1.values()[k], self.x2.values()[k]]
    }

    pub fn component(&self, m: usize) -> &ScalarField {
        if m == 0 {
            &self.x1
        } else {
            &self.x2
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField { x1: self.x1.sub(&other.x1), x2: self.x2.sub(&other.x2) }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField { x1: self.x1.add(&other.x1), x2: self.x2.add(&other.x2) }
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField { x1: self.x1.scale(s), x2: self.x2.scale(s) }
    }

    pub fn max_abs(&self) -> f64 {
        self.x1.max_abs().max(self.x2.max_abs())
    }

    /// Euclidean magnitude per node.
    pub fn magnitude(&self) -> ScalarField {
        self.x1.zip_map(&self.x2, |a, b| a.hypot(b))
    }

    pub fn check_finite(&self) -> Result<()> {
        self.x1.check_finite()?;
        self.x2.check_finite()
    }
}

/// Symmetric 2×2 tensor field stored as `(11, 12, 22)` components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymTensorField {
    pub t11: ScalarField,
    pub t12: ScalarField,
    pub t22: ScalarField,
}

impl SymTensorField {
    #[inline]
    pub fn at(&self, k: usize) -> [[f64; 2]; 2] {
        let (a, b, c) = (self.t11.values()[k], self.t12.values()[k], self.t22.values()[k]);
        [[a, b], [b, c]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_values_rejects_nan_and_bad_length() {
        let g = Grid::new(5).unwrap();
        assert!(ScalarField::from_values(g, vec![0.0; 24]).is_err());
        let mut v = vec![0.0; 25];
        v[7] = f64::NAN;
        assert!(matches!(ScalarField::from_values(g, v), Err(Error::NonFinite { node: 7 })));
    }

    #[test]
    fn l2_interior_of_constant() {
        let g = Grid::new(11).unwrap();
        let f = ScalarField::constant(g, 2.0);
        let expected = (81.0 * 4.0 * g.h() * g.h()).sqrt();
        assert!((f.l2_interior() - expected).abs() < 1e-14);
    }

    #[test]
    fn interior_and_boundary_split() {
        let g = Grid::new(7).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + x + y);
        let back = f.interior_only().add(&f.boundary_only());
        assert_eq!(back, f);
    }
}
