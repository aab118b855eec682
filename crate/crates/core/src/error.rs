use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not hermitian (asymmetry {asymmetry:.3e})")]
    NonHermitian { asymmetry: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("the unit lies in the span of the kernel candidate")]
    UnitInKernel,
    #[error("operation requires a certified kernel")]
    NotAKernel,
    #[error("map does not vanish on the kernel (residual {0:.3e})")]
    KernelNotAnnihilated(f64),
    #[error("map is not *-preserving (residual {0:.3e})")]
    NotStarPreserving(f64),
    #[error("right tensor factor is not a full C*-algebra")]
    PartnerNotCStar,
    #[error("bisection bracket invalid: {0}")]
    BracketInvalid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver failed: {0}")]
    SolverFail(String),
}

pub type Result<T> = std::result::Result<T, Error>;
