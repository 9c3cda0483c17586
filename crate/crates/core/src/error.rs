use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hurst index {0} is out of range: path generation requires 0 < H < 1")]
    HurstOutOfRange(f64),

    #[error("Hurst index {0} is not admissible for drift estimation: requires 1/2 <= H < 1")]
    HurstNotEstimable(f64),

    #[error("fractional order {alpha} is not admissible: {reason}")]
    InvalidOrder { alpha: f64, reason: String },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("covariance factorization failed for n = {n}, H = {hurst}: {reason}")]
    Factorization { n: usize, hurst: f64, reason: String },

    #[error("simulation diverged at step {step} (t = {time}): state = {value}")]
    Diverged { step: usize, time: f64, value: f64 },

    #[error("condition {condition} violated at t = {time}: |coefficient| = {value:e}")]
    Degenerate {
        condition: &'static str,
        time: f64,
        value: f64,
    },

    #[error("non-identifiable: denominator {denominator:e} below tolerance {tolerance:e} ({condition})")]
    NonIdentifiable {
        denominator: f64,
        tolerance: f64,
        condition: &'static str,
    },

    #[error("estimator not applicable: {0}")]
    NotApplicable(String),

    #[error("stopping level h = {level} not reached within horizon {horizon} (accumulated {accumulated})")]
    NotHit {
        level: f64,
        horizon: f64,
        accumulated: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than by a numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::HurstOutOfRange(_)
                | Error::HurstNotEstimable(_)
                | Error::InvalidOrder { .. }
                | Error::InvalidGrid(_)
                | Error::Config(_)
        )
    }
}
