use super::mackinnon::{critical_values, mackinnon_p};
use super::ols::{ols_fit, OlsFit};
use super::{Regression, StatsError, TestResult};

/// `floor(12 * (n / 100)^(1/4))`.
pub fn default_max_lags(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Regress `dy[i]` on `y[i]`, `dy[i-1..=i-lags]` (and a constant) for
/// rows `first..dy.len()`.
fn adf_regression(
    y: &[f64],
    dy: &[f64],
    lags: usize,
    first: usize,
    regression: Regression,
) -> Result<OlsFit, StatsError> {
    let rows = first..dy.len();
    let dep: Vec<f64> = dy[rows.clone()].to_vec();
    let level: Vec<f64> = y[rows.clone()].to_vec();
    let lagged: Vec<Vec<f64>> = (1..=lags).map(|k| rows.clone().map(|i| dy[i - k]).collect()).collect();
    let mut cols: Vec<&[f64]> = vec![&level];
    cols.extend(lagged.iter().map(|c| c.as_slice()));
    ols_fit(&dep, &cols, regression == Regression::Constant)
}

fn aic(fit: &OlsFit) -> f64 {
    let n = fit.nobs as f64;
    n * (fit.rss / n).ln() + 2.0 * fit.coefficients.len() as f64
}

/// Augmented Dickey-Fuller test of a unit root against stationarity.
///
/// The lag order is chosen in `0..=max_lags` by minimising AIC over a
/// common estimation sample, then the chosen model is refit on every
/// usable row. `max_lags` is capped at `n/2 - k - 1` (k deterministic
/// terms) so the regression stays identified.
pub fn adf_test(series: &[f64], max_lags: usize, regression: Regression) -> Result<TestResult, StatsError> {
    let n = series.len();
    if n < max_lags + 10 {
        return Err(StatsError::SeriesTooShort {
            needed: max_lags + 10,
            got: n,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if series.iter().all(|v| *v == series[0]) {
        return Err(StatsError::ZeroVariance);
    }
    let n_trend = usize::from(regression == Regression::Constant);
    let max_lags = max_lags.min((n / 2).saturating_sub(n_trend + 1));

    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = dy.iter().map(|v| v * v).sum::<f64>();

    let mut best: Option<(f64, usize)> = None;
    let mut last_err = None;
    for lags in 0..=max_lags {
        match adf_regression(series, &dy, lags, max_lags, regression) {
            Ok(fit) => {
                let ic = aic(&fit);
                if best.is_none_or(|(b, _)| ic < b) {
                    best = Some((ic, lags));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((_, lags)) = best else {
        return Err(last_err.unwrap_or(StatsError::Degenerate("no admissible lag order".into())));
    };

    let fit = adf_regression(series, &dy, lags, lags, regression)?;
    if fit.rss <= 1e-20 * scale.max(f64::MIN_POSITIVE) {
        return Err(StatsError::Degenerate(
            "zero residual variance after differencing".into(),
        ));
    }
    let statistic = fit.t_value(n_trend);
    Ok(TestResult {
        statistic,
        p_value: mackinnon_p(statistic, regression, 1),
        lags_used: lags,
        nobs: fit.nobs,
        critical_values: critical_values(regression, 1, fit.nobs),
    })
}
