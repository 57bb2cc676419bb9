use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A model definition failed validation.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A displacement vector has the wrong number of coordinates.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A mark does not belong to the model's mark space.
    #[error("mark out of domain: {0}")]
    MarkOutOfDomain(String),

    /// Sampling was requested from a kernel with empty support.
    #[error("empty support: D({a}, {b}) = 0")]
    EmptySupport { a: String, b: String },

    /// An operation received an argument outside its contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be symmetric is not.
    #[error("asymmetric kernel matrix: |h({i},{j}) - h({j},{i})| = {delta}")]
    Asymmetric { i: usize, j: usize, delta: f64 },

    /// A linear system is singular at or beyond the branching threshold.
    #[error("branching threshold reached: {0}")]
    Divergent(String),

    /// A requested simulation would exceed a configured resource limit.
    #[error("resource refusal: {0}")]
    ResourceRefusal(String),

    /// Estimation inputs are inconsistent with each other.
    #[error("mismatched inputs: {0}")]
    MismatchedInputs(String),

    /// Not enough usable data for a fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A scan bracket does not straddle the target threshold.
    #[error("bracket failure: {0}")]
    BracketFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
