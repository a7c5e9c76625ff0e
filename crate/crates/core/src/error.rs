//! Error type shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid order n = {0}; need n >= 2")]
    InvalidOrder(usize),
    #[error("invalid sector/ray index {index} for order n = {n}")]
    InvalidSectorIndex { n: usize, index: usize },
    #[error("spectral point must be nonzero")]
    ZeroSpectralPoint,
    #[error(
        "point lies on a ray of the spectral contour; a ray index is required to fix the frame"
    )]
    AmbiguousFrame,
    #[error("point is not on the spectral contour: {0}")]
    OffContour(String),
    #[error("non-monic symbol: leading coefficient of degree {degree} is not 1")]
    NonMonicSymbol { degree: i64 },
    #[error("subleading coefficient of the operator symbol must vanish")]
    NonzeroSubleading,
    #[error("flow index k = {k} is a multiple of n = {n}; the flow is excluded")]
    TrivialFlow { n: usize, k: usize },
    #[error("truncation depth exhausted: {0}")]
    DepthExhausted(String),
    #[error("potential violates the boundary decay requirement: |u_{index}({x})| = {value:e} >= {tol:e}")]
    DecayViolation {
        index: usize,
        x: f64,
        value: f64,
        tol: f64,
    },
    #[error("wave solver failed to converge at spectral point {point}: residual {residual:e} after {iterations} iterations")]
    SolverNonConvergence {
        point: String,
        residual: f64,
        iterations: usize,
    },
    #[error("step size underflow at x = {0}")]
    StepSizeUnderflow(f64),
    #[error("scattering matrix x-dependence {residual:e} exceeds tolerance {tol:e} at {point}")]
    XDependence {
        point: String,
        residual: f64,
        tol: f64,
    },
    #[error("off-pattern leakage {leakage:e} exceeds tolerance {tol:e} at {point}")]
    BlockLeakage {
        point: String,
        leakage: f64,
        tol: f64,
    },
    #[error("scattering pipelines disagree at {point}: {residual:e} > {tol:e}")]
    PipelineMismatch {
        point: String,
        residual: f64,
        tol: f64,
    },
    #[error("degenerate scattering entry at {point}: |{entry}| = {value:e} below {tol:e}")]
    DegenerateEntry {
        point: String,
        entry: String,
        value: f64,
        tol: f64,
    },
    #[error("block determinant near zero at {point}: |det| = {value:e}; data is too close to the discrete regime")]
    NearDiscreteData { point: String, value: f64 },
    #[error("triangular factorization failed: vanishing pivot at {0}")]
    FactorizationPivot(String),
    #[error("block layout mismatch on ray {ray} for n = {n}")]
    LayoutMismatch { n: usize, ray: usize },
    #[error("evolution blow-up: sup-norm {value:e} exceeded threshold {threshold:e} at t = {t}")]
    BlowUp { t: f64, value: f64, threshold: f64 },
    #[error("boundary decay violated during evolution at t = {t}: {value:e} >= {tol:e}")]
    EvolutionDecay { t: f64, value: f64, tol: f64 },
    #[error("quadrature failed to converge: {0}")]
    QuadratureNonConvergence(String),
    #[error("self-adjointness required: {0}")]
    NotSelfAdjoint(String),
    #[error("spectral point too close to the contour for boundary-value quadrature: {0}")]
    NearContour(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}
