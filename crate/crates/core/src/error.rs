use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("meshes are not nested")]
    NotNested,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel evaluated on the diagonal x = z = {0}")]
    SingularEvaluation(f64),

    #[error("point {x} lies outside the open interval ({a}, {b})")]
    OutsideDomain { x: f64, a: f64, b: f64 },

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("oracle quadrature did not reach tolerance {tolerance:e} within the subdivision budget")]
    OracleBudget { tolerance: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("non-finite energy encountered")]
    NonFiniteEnergy,

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("refinement level {level} failed: {source}")]
    LevelFailed {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
