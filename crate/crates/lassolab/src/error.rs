use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix/vector dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Exponents or weights outside their admissible ranges.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A documented precondition of the called operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Dictionary rejected: smallest singular value under the relative floor.
    #[error("dictionary numerically singular: sigma_min {sigma_min:.3e} below floor {floor:.3e}")]
    SingularDictionary { sigma_min: f64, floor: f64 },

    /// Exhaustive support enumeration would exceed the configured budget.
    #[error(
        "support enumeration budget exceeded: C({n},{t}) = {count} supports > {budget}; \
         use the estimated mode"
    )]
    BudgetExceeded {
        n: usize,
        t: usize,
        count: u128,
        budget: usize,
    },

    /// Malformed numeric text (CSV matrices/vectors, grids).
    #[error("parse error: {0}")]
    Parse(String),

    /// Rejected experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
