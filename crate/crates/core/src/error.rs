use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    /// `at` is the offending atom, rendered as `(i=.., x=.., s=.., sigma=..)`.
    #[error("support error at {at}: {reason}")]
    Support { at: String, reason: String },

    #[error("mass error: {0}")]
    Mass(String),

    #[error("degenerate window: a + b must be positive (a = {a}, b = {b})")]
    DegenerateWindow { a: i64, b: i64 },

    #[error("measure is not consistent: {count} violated condition(s), first: {first}")]
    InconsistentMeasure { count: usize, first: String },

    #[error("stopping rule leaks mass: absorbed {absorbed}, expected 1")]
    Leakage { absorbed: String },

    #[error("trajectory {index} exceeded range cap {cap} (malformed rule?)")]
    NonTermination { index: u64, cap: i64 },

    #[error("state space too large: {0}")]
    Unbounded(String),

    #[error("invalid stopping rule: {0}")]
    InvalidRule(String),

    #[error("box too small: {0}")]
    BoxTooSmall(String),

    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),

    #[error("linear program is unbounded")]
    UnboundedLp,

    #[error("certification failed: {0}")]
    CertificationFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
