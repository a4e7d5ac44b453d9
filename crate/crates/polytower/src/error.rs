use thiserror::Error;

/// Crate-wide error type. Operations that can only fail in one way still
/// return `Result` so callers get a uniform surface.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("{0} is not prime (need a prime modulus 2 <= p < 2^31)")]
    NotPrime(u64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain of {points} points exceeds the exhaustive limit {limit}")]
    LimitExceeded { points: u128, limit: u64 },
    #[error("degree {degree} is not below the characteristic {p}")]
    CharacteristicTooSmall { degree: u32, p: u32 },
    #[error("tower flavor mismatch: {0}")]
    FlavorMismatch(String),
    #[error("layer index {index} out of range for height {height}")]
    IndexOutOfRange { index: usize, height: usize },
    #[error("empty domain")]
    EmptyDomain,
    #[error("rank search budget of {0} candidates exhausted")]
    BudgetExhausted(u64),
    #[error("linear system too large: {unknowns} unknowns exceed the cap {cap}")]
    SystemTooLarge { unknowns: usize, cap: usize },
    #[error("rejection-sampling acceptance rate {rate:.3e} is below the floor {floor:.3e}")]
    AcceptanceTooLow { rate: f64, floor: f64 },
    #[error("budget schedule overflow at layer {layer} (exceeds 2^63)")]
    ScheduleOverflow { layer: usize },
    #[error("iteration cap of {0} exceeded during decomposition")]
    IterationCapExceeded(u64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
