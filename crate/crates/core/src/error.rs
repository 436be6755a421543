use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("metric invalid at node {node}: {reason}")]
    MetricInvalid { node: usize, reason: String },

    #[error("conformal factor left its domain at node {node}: c(x', {height}) = {value}")]
    DomainEscape { node: usize, height: f64, value: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("boundary data too large: sup-norm {smallness} is not below the cap {cap}")]
    DataTooLarge { smallness: f64, cap: f64 },

    #[error("boundary data is nonzero at node {node}, outside its admissible support")]
    SupportViolation { node: usize },

    #[error("singular linear system (pivot ratio estimate {estimate:e})")]
    Singular { estimate: f64 },

    #[error("iterative linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    IterativeStall { iterations: usize, residual: f64 },

    #[error("fields live on different grids ({left} vs {right} nodes per side)")]
    GridMismatch { left: usize, right: usize },

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("finite-difference stencil leaves the small-data region (sup-norm {smallness} >= {cap}); use a smaller eps than {eps}")]
    StencilEscape { eps: f64, smallness: f64, cap: f64 },

    #[error(
        "no adjoint solution with |v0(x0)| large enough after {attempts} boundary traces (values at x0: {values:?})"
    )]
    AdjointConstruction { attempts: usize, values: Vec<f64> },

    #[error("invalid Taylor order {0}: orders 0..=2 are fixed by the standing hypotheses")]
    InvalidOrder(usize),

    #[error("least-squares problem is ill-posed (normal-matrix condition {condition:e}); enlarge the solution family")]
    IllPosed { condition: f64 },

    #[error("vector field difference is not closed (max discrete curl {curl:e})")]
    NotClosed { curl: f64 },

    #[error("Gauss-Newton stagnated (final gradient norm {gradient_norm:e})")]
    Stagnation { gradient_norm: f64 },

    #[error("batch item {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    InvalidArgument(String),
}
