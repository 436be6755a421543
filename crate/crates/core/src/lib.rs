// `!(x > 0.0)` rejects NaN on purpose; index loops mirror tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dn;
pub mod error;
pub mod expr;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod linearization;
pub mod metric;
pub mod mse;
pub mod quadrature;
pub mod recovery;
pub mod spline;

pub use dn::{BoundaryTrace, DNRecord};
pub use error::{Error, Result};
pub use expr::{Expr, ScalarFn};
pub use field::{ScalarField, SymTensorField, VectorField};
pub use grid::{Gamma, Grid, Side};
pub use linearization::{AdvectionOperatorSpec, Linearization, MagneticCoeffs};
pub use metric::{ChristoffelData, ConformalFactor, MetricPreset, MetricSpec, SampledMetric};
pub use mse::{BoundaryData, NewtonReport, SolverOptions};
pub use recovery::{RecoveryResult, SolutionPairFamily};
