use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("value {value} outside the support {support}")]
    OutsideSupport { value: f64, support: String },

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate rates: P[high] = {0} >= 1")]
    DegenerateRates(f64),

    #[error("low band [mn/T, T) is empty (mn/T = {low_price}, T = {truncation})")]
    EmptyBand { low_price: f64, truncation: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("no profitable deviation found: {0}")]
    NoDeviation(String),

    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
