use thiserror::Error;

/// Errors raised by the numerical and combinatorial routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("propagator is singular at momentum {0:?}")]
    SingularMomentum([f64; 4]),

    #[error("time displacement {x0} outside (-beta, beta] with beta = {beta}")]
    TimeOutOfWindow { x0: f64, beta: f64 },

    #[error("scale band h = {h} holds no grid momenta")]
    EmptySupport { h: i32 },

    #[error("support configuration error: {0}")]
    Configuration(String),

    #[error("insufficient grid: {0}")]
    InsufficientGrid(String),

    #[error("finite-difference stencil degenerate (spacing {0})")]
    StencilDegenerate(f64),

    #[error("coupling sign loss at scale {h}: Z = {z}")]
    SignLoss { h: i32, z: f64 },

    #[error("coupling left the perturbative window at scale {h}: {detail}")]
    BlowUp { h: i32, detail: String },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("fixed point did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },

    #[error("momentum outside the relativistic window: |k'| = {norm}, window = {window}")]
    OutOfRegime { norm: f64, window: f64 },

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("inconsistent field assignment: {0}")]
    InconsistentAssignment(String),

    #[error("structural identity violated: {0}")]
    IdentityViolated(String),

    #[error("BBF sign convention not calibrated; run the reference case first")]
    SignCalibrationMissing,

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
