use thiserror::Error;

/// Errors raised by the game model, the solvers, the simulator and the learner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("matrix {0} is not symmetric")]
    NotSymmetric(String),

    #[error("matrix {0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("matrix {0} is not positive semidefinite")]
    NotPositiveSemidefinite(String),

    #[error("discount factor {0} is outside (0, 1)")]
    DiscountOutOfRange(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular matrix while computing {0}")]
    SingularMatrix(String),

    #[error("iteration did not converge after {iterations} iterations (last change {last_delta:e})")]
    MaxIterationsExceeded { iterations: usize, last_delta: f64 },

    #[error("closed loop is not discount-stable: sqrt(gamma)*rho = {0}")]
    UnstableClosedLoop(f64),

    #[error("no exact incentive matrix: residual {residual:e} exceeds {bound:e}")]
    IncentiveInfeasible { residual: f64, bound: f64 },

    #[error("parameter vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("regression matrix has rank {rank}, need {required}; increase the sample count or exploration noise")]
    RankDeficient { rank: usize, required: usize },

    #[error("{found} samples supplied, at least {required} required")]
    TooFewSamples { found: usize, required: usize },

    #[error("policy iteration did not converge after {iterations} iterations (last change {last_delta:e})")]
    NotConverged { iterations: usize, last_delta: f64 },

    #[error("gain grid is empty")]
    EmptyGrid,

    #[error("tail cost requires a rollout under linear policies")]
    TailRequiresLinearPolicy,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(
    what: impl Into<String>,
    expected: impl ToString,
    found: impl ToString,
) -> Error {
    Error::DimensionMismatch {
        what: what.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
