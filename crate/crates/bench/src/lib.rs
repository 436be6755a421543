//! Shared setups for the solver benchmarks.

use mselab_core::linalg::CsrMatrix;
use mselab_core::metric::default_conformal;
use mselab_core::{AdvectionOperatorSpec, BoundaryData, Grid, MetricPreset, MetricSpec, SampledMetric};

pub fn canonical_metric(n: usize) -> SampledMetric {
    MetricSpec::preset(MetricPreset::DiagPoly, default_conformal())
        .sample(Grid::new(n).expect("valid grid"))
        .expect("metric samples")
}

pub fn boundary_datum(grid: Grid) -> BoundaryData {
    BoundaryData::from_fn(grid, |x, y| 0.04 * (std::f64::consts::PI * x).sin() * (1.0 + y)).expect("boundary datum")
}

/// Assembled first linearization `−Δ̂ + X·∇` on interior nodes.
pub fn linearized_matrix(metric: &SampledMetric) -> CsrMatrix {
    AdvectionOperatorSpec::from_metric(metric).stencil(metric).assemble()
}

/// Smooth bump sampled on interior nodes.
pub fn bump_rhs(grid: Grid) -> Vec<f64> {
    (0..grid.interior_len())
        .map(|r| {
            let (x, y) = grid.xy(grid.interior_node(r));
            (-(20.0 * ((x - 0.4).powi(2) + (y - 0.6).powi(2)))).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setups_are_consistent() {
        let m = canonical_metric(9);
        let a = linearized_matrix(&m);
        assert_eq!(a.n(), m.grid().interior_len());
        assert_eq!(bump_rhs(*m.grid()).len(), a.n());
        assert!(boundary_datum(*m.grid()).smallness() <= 0.08);
    }
}
