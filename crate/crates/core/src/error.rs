use thiserror::Error;

/// Errors raised by the pricing, response and analytics routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A constructor argument violates a model invariant.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch: expected {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The instance cannot be served without breaking an envelope or a
    /// consumption bound.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("target demand {target} kWh outside achievable range [{lo}, {hi}] kWh")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },

    #[error("root finder stopped with residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("unknown member `{0}`")]
    UnknownMember(String),

    #[error("usage: {0}")]
    Usage(String),

    /// A configuration or data file could not be parsed.
    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    /// A finite-difference step could not avoid crossing a zone threshold.
    #[error("threshold crossing: {0}")]
    ThresholdCrossing(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
