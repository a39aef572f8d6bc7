use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a structural invariant (arms, tiers, clusters).
    #[error("invalid data: {0}")]
    Data(String),

    /// Two subjects cannot be compared under the same rule.
    #[error("tier sets differ between subjects `{a}` and `{b}`")]
    TierMismatch { a: String, b: String },

    /// A parameter lies outside its admissible domain.
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    /// The requested design cannot be evaluated or achieved.
    #[error("infeasible design: {reason}")]
    Infeasible {
        reason: String,
        /// (M, variance) pairs visited before giving up, when available.
        trajectory: Vec<(u64, f64)>,
    },

    /// An estimand is not defined for the observed data.
    #[error("undefined estimate: {0}")]
    Undefined(String),

    /// Numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at row {row}: {reason}")]
    Parse { row: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }

    pub fn infeasible(reason: impl Into<String>) -> Self {
        Error::Infeasible {
            reason: reason.into(),
            trajectory: Vec::new(),
        }
    }
}
