use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh dimensions: {0}")]
    InvalidMesh(String),

    #[error("grid dimension mismatch: expected {expected:?}, got {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid material law: {0}")]
    InvalidLaw(String),

    #[error("contrast condition violated ({clause}): {detail}")]
    ContrastViolation { clause: &'static str, detail: String },

    #[error("anomaly region touches the domain rim; {0} requires a well-contained inclusion")]
    RimTouching(&'static str),

    #[error("law `{0}` carries no evaluator (perfect conductor/insulator)")]
    NoEvaluator(&'static str),

    #[error("invalid boundary data: {0}")]
    InvalidBoundaryData(String),

    #[error("degenerate excitation: zero-mean projection of the input is identically zero")]
    DegenerateExcitation,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("nonlinear solver did not converge after {iterations} iterations (residual history: {history:?})")]
    NotConverged { iterations: usize, history: Vec<f64> },

    #[error("line search stalled at relative residual {residual:e} after {iterations} iterations")]
    Stalled { iterations: usize, residual: f64 },

    #[error("missing measurements: {0}")]
    MissingMeasurements(String),

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
