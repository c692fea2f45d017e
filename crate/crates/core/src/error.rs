use crate::expr::ExprError;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("metric is not positive definite at {point:?}")]
    NonPositiveDefinite { point: Vec<f64> },
    #[error("point {point:?} is not on the boundary (|rho| = {rho:e})")]
    NotOnBoundary { point: Vec<f64>, rho: f64 },
    #[error("vector is not tangent to the boundary (g(xi, nu) = {inner:e})")]
    NotTangent { inner: f64 },
    #[error("geodesic did not exit after arc length {length}")]
    NoExit { length: f64 },
    #[error("integrator failed at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("chart degenerate: {0}")]
    ChartDegenerate(String),
    #[error("stencil leaves the sampled grid at {point:?}")]
    GridBoundary { point: Vec<f64> },
    #[error("stencil leaves the tube at line {line}")]
    StencilBoundary { line: usize },
    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tol:e}")]
    QuadratureFailure { estimate: f64, tol: f64 },
    #[error("linear solver breakdown: {0}")]
    SingularSystem(String),
    #[error("no avoiding geodesic found through {point:?}")]
    NotFound { point: Vec<f64> },
    #[error("deformation stuck near {location:?} (clearance {clearance:e})")]
    DeformationStuck { location: Vec<f64>, clearance: f64 },
    #[error("overlapping cones disagree by {discrepancy:e}")]
    OverlapMismatch { discrepancy: f64 },
    #[error("hypothesis violated: |If| = {value:e} on the ray {entry:?} -> {exit:?}")]
    HypothesisViolated {
        value: f64,
        entry: Vec<f64>,
        exit: Vec<f64>,
    },
    #[error("body is not geodesically convex: the geodesic {a:?} -> {b:?} leaves it at {point:?}")]
    NotConvex {
        a: Vec<f64>,
        b: Vec<f64>,
        point: Vec<f64>,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
