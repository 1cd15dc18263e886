use thiserror::Error;

/// Errors produced by the solvers and evaluators in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("users are not sorted by ascending uplink gain (user {index} has a larger gain than user {next})")]
    InvalidDecodingOrder { index: usize, next: usize },

    #[error("user {user} computes {bits} bits with zero consumed energy")]
    NanGuard { user: usize, bits: f64 },

    #[error("problem is infeasible (phase-I certificate {certificate:.3e})")]
    Infeasible { certificate: f64 },

    #[error("no strictly feasible starting point")]
    NoStrictlyFeasibleStart,

    #[error("newton iteration limit reached (gap {gap:.3e})")]
    MaxNewtonIters { gap: f64 },

    #[error("line search stalled (newton decrement {decrement:.3e})")]
    LineSearchStall { decrement: f64 },

    #[error("inner solver failed at outer iteration {iteration}: {message}")]
    InnerSolverFailure { iteration: usize, message: String },

    #[error("did not converge within {iterations} iterations (best value {best:.6e})")]
    NonConvergent { iterations: usize, best: f64 },

    #[error("dual variables give a non-positive denominator ({denominator:.3e})")]
    DegenerateDuals { denominator: f64 },

    #[error("harvest-time derivative is positive ({z:.3e}); duals are not dual feasible")]
    PositiveZ { z: f64 },

    #[error("threshold equation has degenerate coefficients: {0}")]
    DegenerateCoefficients(String),

    #[error("energy budget already exceeded (Z = {z:.3e})")]
    NegativeZ { z: f64 },

    #[error("dual ascent left a relative gap of {gap:.3e}")]
    GapNotClosed { gap: f64 },

    #[error("no feasible grid point")]
    NoFeasiblePoint,

    #[error("all values are zero")]
    AllZero,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
