//! Uniform node grid on the unit square and named boundary subsets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n × n` nodes on `[0,1]²`, spacing `h = 1/(n-1)`.
///
/// Nodes are numbered `k = j*n + i` with `i` along `x1` and `j` along `x2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    /// At least 5 nodes per side are needed for the one-sided boundary stencils
    /// to stay away from each other.
    pub fn new(n: usize) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidGrid(format!("need at least 5 nodes per side, got {n}")));
        }
        Ok(Grid { n })
    }

    pub fn from_dims(nx: usize, ny: usize) -> Result<Self> {
        if nx != ny {
            return Err(Error::InvalidGrid(format!("cells must be square on the unit square, got {nx} x {ny} nodes")));
        }
        Self::new(nx)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            1.0
        } else {
            i as f64 * self.h()
        }
    }

    #[inline]
    pub fn xy(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.ij(k);
        (self.coord(i), self.coord(j))
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    #[inline]
    pub fn is_corner(&self, i: usize, j: usize) -> bool {
        (i == 0 || i == self.n - 1) && (j == 0 || j == self.n - 1)
    }

    /// Number of interior nodes, `(n-2)²`.
    #[inline]
    pub fn interior_len(&self) -> usize {
        (self.n - 2) * (self.n - 2)
    }

    /// Position of an interior node in the unknown vector.
    #[inline]
    pub fn interior_index(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.n - 2) + (i - 1)
    }

    /// Grid node of the `r`-th interior unknown.
    #[inline]
    pub fn interior_node(&self, r: usize) -> usize {
        let m = self.n - 2;
        self.idx(r % m + 1, r / m + 1)
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.len())
            .map(|k| {
                let (i, j) = self.ij(k);
                !self.is_boundary(i, j)
            })
            .collect()
    }

    /// Boundary nodes counterclockwise from the origin: bottom, right, top, left.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let n = self.n;
        let mut out = Vec::with_capacity(4 * (n - 1));
        out.extend((0..n - 1).map(|i| self.idx(i, 0)));
        out.extend((0..n - 1).map(|j| self.idx(n - 1, j)));
        out.extend((1..n).rev().map(|i| self.idx(i, n - 1)));
        out.extend((1..n).rev().map(|j| self.idx(0, j)));
        out
    }

    /// Side that a non-corner boundary node lies on.
    pub fn side_of(&self, i: usize, j: usize) -> Option<Side> {
        if self.is_corner(i, j) || !self.is_boundary(i, j) {
            return None;
        }
        Some(if j == 0 {
            Side::Bottom
        } else if i == self.n - 1 {
            Side::Right
        } else if j == self.n - 1 {
            Side::Top
        } else {
            Side::Left
        })
    }

    /// Nearest node to a point of the square.
    pub fn nearest(&self, x1: f64, x2: f64) -> usize {
        let to = |x: f64| ((x.clamp(0.0, 1.0) / self.h()).round() as usize).min(self.n - 1);
        self.idx(to(x1), to(x2))
    }

    /// Central node (rounded down for even `n`).
    pub fn center(&self) -> usize {
        self.idx(self.n / 2, self.n / 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    /// Outward Euclidean unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }

    /// Node at position `p` along the side, `p` increasing with the free coordinate.
    pub fn node(self, grid: &Grid, p: usize) -> usize {
        let last = grid.n() - 1;
        match self {
            Side::Bottom => grid.idx(p, 0),
            Side::Top => grid.idx(p, last),
            Side::Left => grid.idx(0, p),
            Side::Right => grid.idx(last, p),
        }
    }

    /// Position of a node along this side, if it lies on it.
    pub fn position(self, grid: &Grid, k: usize) -> Option<usize> {
        let (i, j) = grid.ij(k);
        let last = grid.n() - 1;
        match self {
            Side::Bottom if j == 0 => Some(i),
            Side::Top if j == last => Some(i),
            Side::Left if i == 0 => Some(j),
            Side::Right if i == last => Some(j),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::Bottom => "bottom",
            Side::Right => "right",
            Side::Top => "top",
            Side::Left => "left",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bottom" => Ok(Side::Bottom),
            "right" => Ok(Side::Right),
            "top" => Ok(Side::Top),
            "left" => Ok(Side::Left),
            other => Err(Error::InvalidArgument(format!("unknown side '{other}'"))),
        }
    }
}

/// Portion of the boundary where data are prescribed and measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gamma {
    All,
    Side(Side),
    /// Nodes `i0..=i1` along one side.
    Arc {
        side: Side,
        i0: usize,
        i1: usize,
    },
}

/// Nodes kept clear of data near the ends of a partial arc.
pub const GAMMA_BUFFER: usize = 2;

impl Gamma {
    pub fn contains(&self, grid: &Grid, k: usize) -> bool {
        let (i, j) = grid.ij(k);
        if !grid.is_boundary(i, j) {
            return false;
        }
        match *self {
            Gamma::All => true,
            Gamma::Side(side) => side.position(grid, k).is_some(),
            Gamma::Arc { side, i0, i1 } => {
                matches!(side.position(grid, k), Some(p) if p >= i0 && p <= i1)
            }
        }
    }

    /// Nodes where partial data may be nonzero: `Γ` minus a buffer at its ends.
    pub fn admits_data(&self, grid: &Grid, k: usize) -> bool {
        match *self {
            Gamma::All => grid.is_boundary(grid.ij(k).0, grid.ij(k).1),
            Gamma::Side(side) => matches!(
                side.position(grid, k),
                Some(p) if p >= GAMMA_BUFFER && p + GAMMA_BUFFER < grid.n()
            ),
            Gamma::Arc { side, i0, i1 } => matches!(
                side.position(grid, k),
                Some(p) if p >= i0 + GAMMA_BUFFER && p + GAMMA_BUFFER <= i1
            ),
        }
    }

    /// Boundary nodes in `Γ`, in canonical counterclockwise order.
    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        grid.boundary_nodes().into_iter().filter(|&k| self.contains(grid, k)).collect()
    }

    /// Parameter interval `[a, b]` of a partial `Γ` along its side, in `[0,1]`.
    pub fn interval(&self, grid: &Grid) -> Option<(Side, f64, f64)> {
        match *self {
            Gamma::All => None,
            Gamma::Side(side) => Some((side, 0.0, 1.0)),
            Gamma::Arc { side, i0, i1 } => Some((side, grid.coord(i0), grid.coord(i1))),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if let Gamma::Arc { i0, i1, .. } = *self {
            if i1 >= grid.n() || i0 + 2 * GAMMA_BUFFER >= i1 {
                return Err(Error::InvalidArgument(format!(
                    "arc {i0}..{i1} does not fit a {}-node side with a {GAMMA_BUFFER}-node buffer",
                    grid.n()
                )));
            }
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Gamma::All)
    }
}

impl FromStr for Gamma {
    type Err = Error;

    /// `all`, `left`, `right`, `top`, `bottom`, or `arc:i0:i1:side`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(Gamma::All);
        }
        if let Some(rest) = s.strip_prefix("arc:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidArgument(format!("expected arc:i0:i1:side, got '{s}'")));
            }
            let num = |p: &str| p.parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad arc index '{p}'")));
            let (i0, i1) = (num(parts[0])?, num(parts[1])?);
            if i0 >= i1 {
                return Err(Error::InvalidArgument(format!("empty arc {i0}..{i1}")));
            }
            return Ok(Gamma::Arc { side: parts[2].parse()?, i0, i1 });
        }
        Ok(Gamma::Side(s.parse()?))
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::All => write!(f, "all"),
            Gamma::Side(s) => write!(f, "{}", s.name()),
            Gamma::Arc { side, i0, i1 } => write!(f, "arc:{i0}:{i1}:{}", side.name()),
        }
    }
}
