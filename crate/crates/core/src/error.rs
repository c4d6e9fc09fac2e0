use thiserror::Error;

use crate::linalg::StateReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vector length {0} is not a perfect square")]
    NotPerfectSquare(usize),

    #[error("subsystem index {index} out of range for {len} factors")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("singular or ill-conditioned system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("negative rate {0}")]
    NegativeRate(f64),

    #[error("operator is not hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("Kraus set is not complete: |sum V^dag V - I| = {0:.3e}")]
    IncompleteKraus(f64),

    #[error("invalid ancilla specification: {0}")]
    InvalidAncilla(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("jump probability vanishes for this state")]
    ZeroJumpProbability,

    #[error("survival probability underflow at t = {t}")]
    SurvivalUnderflow { t: f64 },

    #[error("survival probability is not monotone near t = {t} (generator bug?)")]
    NonMonotoneSurvival { t: f64 },

    #[error("state validation failed at step {step}: {report}")]
    InvalidState { step: usize, report: StateReport },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("support violation: reference state has eigenvalue {eigenvalue:.3e} where the state has weight {weight:.3e}")]
    SupportViolation { eigenvalue: f64, weight: f64 },

    #[error("stationary state is not unique (null space dimension {nullity})")]
    DegenerateStationary { nullity: usize },

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("malformed CSV: {0}")]
    Csv(String),
}
