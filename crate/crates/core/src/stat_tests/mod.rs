//! Least squares, Augmented Dickey-Fuller and Engle-Granger machinery used
//! to validate candidate pairs.

mod adf;
mod coint;
mod mackinnon;
mod ols;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adf::{adf_test, default_max_lags};
pub use coint::{engle_granger, engle_granger_with_lags, is_retained, validate_pairs, CointegrateOn};
pub use mackinnon::{critical_values, mackinnon_p};
pub use ols::{ols_fit, OlsFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("insufficient observations: need {needed}, got {got}")]
    InsufficientObservations { needed: usize, got: usize },
    #[error("non-finite value in regression input")]
    NonFinite,
    #[error("design matrix is rank deficient at column {0}")]
    RankDeficient(usize),
    #[error("series too short: need {needed}, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("degenerate test regression: {0}")]
    Degenerate(String),
}

/// Deterministic terms in the test regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regression {
    Constant,
    None,
}

/// Outcome of a unit-root or cointegration test. The p-value is left-tailed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lags_used: usize,
    pub nobs: usize,
    /// 1%, 5% and 10% critical values at this sample size.
    pub critical_values: [f64; 3],
}
