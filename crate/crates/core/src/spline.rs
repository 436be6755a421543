//! Clamped cubic B-splines on `[0, 1]` and their tensor products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid;

const DEGREE: usize = 3;

/// Clamped uniform cubic B-spline basis with `count` functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicBasis {
    knots: Vec<f64>,
    count: usize,
}

impl CubicBasis {
    pub fn new(count: usize) -> Result<Self> {
        if count < DEGREE + 1 {
            return Err(Error::InvalidArgument(format!("a cubic basis needs at least 4 functions, got {count}")));
        }
        let spans = count - DEGREE;
        let mut knots = vec![0.0; DEGREE];
        knots.extend((0..=spans).map(|s| s as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, DEGREE));
        Ok(CubicBasis { knots, count })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn span(&self, x: f64) -> usize {
        let x = x.clamp(0.0, 1.0);
        if x >= 1.0 {
            return self.count - 1;
        }
        // knots[span] ≤ x < knots[span + 1]
        let mut lo = DEGREE;
        let mut hi = self.count;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis values and first derivatives at `x`: `(first index, values, derivatives)`.
    pub fn eval_nonzero(&self, x: f64) -> (usize, [f64; 4], [f64; 4]) {
        let t = &self.knots;
        let s = self.span(x);
        let x = x.clamp(0.0, 1.0);
        // de Boor triangle up to degree 2, then degree 3 with derivatives
        let mut n = [0.0f64; 4];
        n[0] = 1.0;
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        let mut lower = [0.0f64; 3];
        for d in 1..=DEGREE {
            left[d] = x - t[s + 1 - d];
            right[d] = t[s + d] - x;
            if d == DEGREE {
                lower.copy_from_slice(&n[..3]);
            }
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let tmp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[d - r] * tmp;
            }
            n[d] = saved;
        }
        // N'_{i,3} = 3 (N_{i,2}/(t_{i+3} − t_i) − N_{i+1,2}/(t_{i+4} − t_{i+1}))
        let first = s - DEGREE;
        let mut dn = [0.0; 4];
        for (r, out) in dn.iter_mut().enumerate() {
            let i = first + r;
            let a = if r >= 1 {
                let den = t[i + DEGREE] - t[i];
                if den > 0.0 {
                    lower[r - 1] / den
                } else {
                    0.0
                }
            } else {
                0.0
            };
            let b = if r < DEGREE {
                let den = t[i + DEGREE + 1] - t[i + 1];
                if den > 0.0 {
                    lower[r] / den
                } else {
                    0.0
                }
            } else {
                0.0
            };
            *out = DEGREE as f64 * (a - b);
        }
        (first, n, dn)
    }

    pub fn value(&self, b: usize, x: f64) -> f64 {
        let (first, n, _) = self.eval_nonzero(x);
        if (first..first + 4).contains(&b) {
            n[b - first]
        } else {
            0.0
        }
    }
}

/// Tensor-product basis `B_a(x1) B_b(x2)`, flattened as `a + count·b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBasis {
    axis: CubicBasis,
}

impl TensorBasis {
    pub fn new(per_axis: usize) -> Result<Self> {
        Ok(TensorBasis { axis: CubicBasis::new(per_axis)? })
    }

    pub fn per_axis(&self) -> usize {
        self.axis.len()
    }

    pub fn len(&self) -> usize {
        self.axis.len() * self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// `(index, value, [∂_1, ∂_2])` for the 16 functions not vanishing at the point.
    pub fn nonzero(&self, x1: f64, x2: f64) -> Vec<(usize, f64, [f64; 2])> {
        let (fa, na, da) = self.axis.eval_nonzero(x1);
        let (fb, nb, db) = self.axis.eval_nonzero(x2);
        let m = self.axis.len();
        let mut out = Vec::with_capacity(16);
        for q in 0..4 {
            for p in 0..4 {
                out.push(((fa + p) + m * (fb + q), na[p] * nb[q], [da[p] * nb[q], na[p] * db[q]]));
            }
        }
        out
    }

    pub fn eval(&self, coeffs: &[f64], x1: f64, x2: f64) -> f64 {
        self.nonzero(x1, x2).iter().map(|(k, v, _)| coeffs[*k] * v).sum()
    }

    pub fn gradient(&self, coeffs: &[f64], x1: f64, x2: f64) -> [f64; 2] {
        self.nonzero(x1, x2)
            .iter()
            .fold([0.0, 0.0], |acc, (k, _, d)| [acc[0] + coeffs[*k] * d[0], acc[1] + coeffs[*k] * d[1]])
    }

    /// Basis function `k` sampled on the grid.
    pub fn sample(&self, grid: Grid, k: usize) -> ScalarField {
        let m = self.axis.len();
        let (a, b) = (k % m, k / m);
        ScalarField::from_fn(grid, |x, y| self.axis.value(a, x) * self.axis.value(b, y))
    }

    pub fn sample_coeffs(&self, grid: Grid, coeffs: &[f64]) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.eval(coeffs, x, y))
    }
}
