use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The contract document does not follow the schema.
    #[error("parse error at `{key}`: {message}")]
    Parse { key: String, message: String },

    /// A value is syntactically fine but violates a model constraint.
    #[error("validation error at `{key}`: {message}")]
    Validation { key: String, message: String },

    /// Solver or simulation options that cannot work with the given contract.
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("solver produced a non-finite value at t = {time}")]
    NonFinite { time: f64 },

    #[error(
        "total exit rate {rate} exceeds rate bound {bound} at t = {time} (state {state}, mode {mode}, duration {duration})"
    )]
    RateBoundExceeded {
        time: f64,
        state: usize,
        mode: usize,
        duration: f64,
        rate: f64,
        bound: f64,
    },

    #[error("fixed-point iteration did not converge at t = {time} after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        time: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error(
        "actuarial equivalence infeasible at tau = {time}: new-mode value is 0 but wealth to transfer is {numerator}"
    )]
    EquivalenceInfeasible { time: f64, numerator: f64 },

    #[error("more than {cap} contract modifications on one path")]
    TooManyModifications { cap: usize },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
