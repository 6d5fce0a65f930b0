//! Spread construction, Ornstein-Uhlenbeck calibration through the exact
//! AR(1) discretisation, z-scores, rolling statistics and a seeded path
//! simulator.
//!
//! With step `delta` the OU process `dS = lambda (mu - S) dt + sigma dW`
//! discretises exactly to `S[t+1] = a S[t] + b + eps` where
//! `a = exp(-lambda delta)`, `b = mu (1 - a)` and
//! `sd(eps) = sigma sqrt((1 - exp(-2 lambda delta)) / (2 lambda))`.

use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::PricePanel;
use crate::pair_selection::PairCandidate;
use crate::stat_tests::{ols_fit, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OuError {
    #[error("AR(1) slope a = {a} is outside (0, 1); the spread is not mean reverting")]
    NonMeanReverting { a: f64 },
    #[error("time step must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("invalid OU parameters: {0}")]
    InvalidParams(String),
    #[error("sigma is zero; z-score undefined")]
    ZeroSigma,
    #[error("need at least {needed} spread observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("spread is constant")]
    ConstantSpread,
    #[error("spread has missing values")]
    MissingValues,
    #[error("rolling window {window} is invalid for a series of length {len}")]
    BadWindow { window: usize, len: usize },
    #[error("{0}")]
    UnknownSecurity(String),
    #[error("AR(1) regression failed: {0}")]
    Fit(StatsError),
}

/// Price difference `close(sec_i) - close(sec_j)` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct Spread {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

pub fn make_spread(panel: &PricePanel, pair: &PairCandidate) -> Result<Spread, OuError> {
    let i = panel
        .index_of(&pair.sec_i)
        .map_err(|e| OuError::UnknownSecurity(e.to_string()))?;
    let j = panel
        .index_of(&pair.sec_j)
        .map_err(|e| OuError::UnknownSecurity(e.to_string()))?;
    let values: Vec<f64> = panel
        .closes(i)
        .iter()
        .zip(panel.closes(j))
        .map(|(a, b)| a - b)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OuError::MissingValues);
    }
    Ok(Spread {
        dates: panel.dates().to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Fit {
    pub a: f64,
    pub b: f64,
    /// Residual sd, denominator `n - 2`.
    pub sd_eps: f64,
    pub se_a: f64,
}

const MIN_AR1_LEN: usize = 30;

/// OLS of `S[t+1]` on `S[t]` with an intercept.
pub fn fit_ar1(values: &[f64]) -> Result<Ar1Fit, OuError> {
    if values.len() < MIN_AR1_LEN {
        return Err(OuError::TooShort {
            needed: MIN_AR1_LEN,
            got: values.len(),
        });
    }
    let x = &values[..values.len() - 1];
    let y = &values[1..];
    if x.iter().all(|v| *v == x[0]) {
        return Err(OuError::ConstantSpread);
    }
    let fit = ols_fit(y, &[x], true).map_err(|e| match e {
        StatsError::RankDeficient(_) => OuError::ConstantSpread,
        StatsError::NonFinite => OuError::MissingValues,
        e => OuError::Fit(e),
    })?;
    Ok(Ar1Fit {
        a: fit.coefficients[1],
        b: fit.coefficients[0],
        sd_eps: fit.resid_sd(),
        se_a: fit.stderr_coeffs[1],
    })
}

/// Calibrated spread model, in both the AR(1) and continuous-time forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub a: f64,
    pub b: f64,
    pub sd_eps: f64,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    pub delta: f64,
}

impl OuParams {
    /// From continuous-time parameters.
    pub fn from_continuous(lambda: f64, mu: f64, sigma: f64, delta: f64) -> Result<Self, OuError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(OuError::InvalidDelta(delta));
        }
        if !(lambda > 0.0 && lambda.is_finite()) || !(sigma >= 0.0 && sigma.is_finite()) || !mu.is_finite() {
            return Err(OuError::InvalidParams(format!(
                "lambda = {lambda}, mu = {mu}, sigma = {sigma}"
            )));
        }
        let a = (-lambda * delta).exp();
        Ok(OuParams {
            a,
            b: mu * (1.0 - a),
            sd_eps: sigma * (-(-2.0 * lambda * delta).exp_m1() / (2.0 * lambda)).sqrt(),
            lambda,
            mu,
            sigma,
            delta,
        })
    }

    /// `ln 2 / lambda`, in units of `delta`'s time unit.
    pub fn half_life(&self) -> f64 {
        std::f64::consts::LN_2 / self.lambda
    }

    /// Stationary variance `sigma^2 / (2 lambda)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.lambda)
    }
}

/// Inverts the AR(1) coefficients into OU parameters.
pub fn ou_from_ar1(a: f64, b: f64, sd_eps: f64, delta: f64) -> Result<OuParams, OuError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(OuError::InvalidDelta(delta));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(OuError::NonMeanReverting { a });
    }
    let ln_a = a.ln();
    Ok(OuParams {
        a,
        b,
        sd_eps,
        lambda: -ln_a / delta,
        mu: b / (1.0 - a),
        sigma: sd_eps * (-2.0 * ln_a / (delta * (1.0 - a * a))).sqrt(),
        delta,
    })
}

/// Fits the AR(1) form of a spread and inverts it.
pub fn calibrate(values: &[f64], delta: f64) -> Result<OuParams, OuError> {
    let fit = fit_ar1(values)?;
    ou_from_ar1(fit.a, fit.b, fit.sd_eps, delta)
}

pub fn zscore(s_t: f64, params: &OuParams) -> Result<f64, OuError> {
    if params.sigma == 0.0 {
        return Err(OuError::ZeroSigma);
    }
    Ok((s_t - params.mu) / params.sigma)
}

/// Exact-discretisation path of length `n` starting at `s0`; the same
/// seed always yields the same path.
pub fn simulate_ou(params: &OuParams, n: usize, s0: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_ou_with(params, n, s0, &mut rng)
}

pub fn simulate_ou_with<R: rand::Rng + ?Sized>(params: &OuParams, n: usize, s0: f64, rng: &mut R) -> Vec<f64> {
    let mut path = Vec::with_capacity(n);
    let mut s = s0;
    for t in 0..n {
        if t > 0 {
            let z: f64 = StandardNormal.sample(rng);
            s = params.a * s + params.b + params.sd_eps * z;
        }
        path.push(s);
    }
    path
}

/// Per-index rolling mean and sd.
pub type RollingStats = (Vec<Option<f64>>, Vec<Option<f64>>);

/// Trailing-window mean and sample sd (denominator `window - 1`), updated
/// incrementally. Entries before `window - 1` are `None`.
pub fn rolling_stats(values: &[f64], window: usize) -> Result<RollingStats, OuError> {
    if window < 2 || window > values.len() {
        return Err(OuError::BadWindow {
            window,
            len: values.len(),
        });
    }
    let mut means = vec![None; values.len()];
    let mut sds = vec![None; values.len()];
    let w = window as f64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, x) in values[..window].iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    let emit = |t: usize, mean: f64, m2: f64, means: &mut Vec<Option<f64>>, sds: &mut Vec<Option<f64>>| {
        means[t] = Some(mean);
        sds[t] = Some((m2.max(0.0) / (w - 1.0)).sqrt());
    };
    emit(window - 1, mean, m2, &mut means, &mut sds);
    for t in window..values.len() {
        let (x_new, x_old) = (values[t], values[t - window]);
        let step = x_new - x_old;
        let new_mean = mean + step / w;
        m2 += step * (x_new - new_mean + x_old - mean);
        mean = new_mean;
        emit(t, mean, m2, &mut means, &mut sds);
    }
    Ok((means, sds))
}

/// One line of the calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub sec_i: String,
    pub sec_j: String,
    pub a: f64,
    pub b: f64,
    pub sd_eps: f64,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    pub delta: f64,
    pub half_life: f64,
}

impl CalibrationRow {
    pub fn new(pair: &PairCandidate, p: &OuParams) -> Self {
        CalibrationRow {
            sec_i: pair.sec_i.0.clone(),
            sec_j: pair.sec_j.0.clone(),
            a: p.a,
            b: p.b,
            sd_eps: p.sd_eps,
            lambda: p.lambda,
            mu: p.mu,
            sigma: p.sigma,
            delta: p.delta,
            half_life: p.half_life(),
        }
    }

    pub fn key(&self) -> String {
        format!("{}/{}", self.sec_i, self.sec_j)
    }

    pub fn params(&self) -> OuParams {
        OuParams {
            a: self.a,
            b: self.b,
            sd_eps: self.sd_eps,
            lambda: self.lambda,
            mu: self.mu,
            sigma: self.sigma,
            delta: self.delta,
        }
    }
}

pub fn write_calibration(path: &Path, rows: &[CalibrationRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_calibration(path: &Path) -> Result<Vec<CalibrationRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
