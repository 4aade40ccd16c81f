use thiserror::Error;

/// Errors raised by the numerical kernels and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("level {level} does not exceed the local minimum {minimum} at x = {x}")]
    NoRoot { x: f64, level: f64, minimum: f64 },

    #[error("local minimum {minimum} exceeds the flat level {level} at x = {x}; the sup of k is underestimated")]
    InconsistentBounds { x: f64, level: f64, minimum: f64 },

    #[error("level {level} is not above the flat level {flat}")]
    OutOfRange { level: f64, flat: f64 },

    #[error("slope {slope} lies on the flat piece [{lower}, {upper}]")]
    FlatPiece { slope: f64, lower: f64, upper: f64 },

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("undefined quench threshold: {0}")]
    UndefinedThreshold(String),

    #[error("window of length {0} contains no complete interval of the strain level set")]
    InsufficientWindow(f64),

    #[error("iteration failed to converge after {iterations} steps (residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("CFL number {0} exceeds the admissible bound 0.4")]
    CflViolation(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
