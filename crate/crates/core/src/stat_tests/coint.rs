use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adf::{adf_test, default_max_lags};
use super::mackinnon::{critical_values, mackinnon_p};
use super::ols::ols_fit;
use super::{Regression, StatsError, TestResult};
use crate::market_data::PricePanel;
use crate::pair_selection::PairCandidate;

const MIN_OBS: usize = 30;

/// Which series of a pair the cointegration test runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CointegrateOn {
    #[default]
    Returns,
    Prices,
}

/// Two-step Engle-Granger test with the default lag cap.
pub fn engle_granger(y: &[f64], x: &[f64]) -> Result<TestResult, StatsError> {
    engle_granger_with_lags(y, x, None)
}

/// Regresses `y` on `x` with an intercept, then runs an ADF test (no
/// deterministic terms) on the residuals. The p-value and critical values
/// come from the two-series cointegration surface, which accounts for the
/// estimated cointegrating vector.
pub fn engle_granger_with_lags(y: &[f64], x: &[f64], max_lags: Option<usize>) -> Result<TestResult, StatsError> {
    if y.len() != x.len() {
        return Err(StatsError::LengthMismatch(y.len(), x.len()));
    }
    if y.len() < MIN_OBS {
        return Err(StatsError::SeriesTooShort {
            needed: MIN_OBS,
            got: y.len(),
        });
    }
    let fit = ols_fit(y, &[x], true)?;
    let lags = max_lags.unwrap_or_else(|| default_max_lags(fit.residuals.len()));
    let adf = adf_test(&fit.residuals, lags, Regression::None)?;
    Ok(TestResult {
        p_value: mackinnon_p(adf.statistic, Regression::Constant, 2),
        critical_values: critical_values(Regression::Constant, 2, y.len() - 1),
        ..adf
    })
}

pub fn is_retained(p_value: f64, alpha: f64) -> bool {
    p_value < alpha
}

fn aligned_series(panel: &PricePanel, pair: &PairCandidate, on: CointegrateOn) -> Result<(Vec<f64>, Vec<f64>), String> {
    let i = panel.index_of(&pair.sec_i).map_err(|e| e.to_string())?;
    let j = panel.index_of(&pair.sec_j).map_err(|e| e.to_string())?;
    let (a, b) = match on {
        CointegrateOn::Returns => (panel.returns(i), panel.returns(j)),
        CointegrateOn::Prices => (panel.closes(i), panel.closes(j)),
    };
    Ok(a.iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .unzip())
}

/// Runs Engle-Granger on each pair's training series, always regressing
/// `sec_i` on `sec_j`. A pair whose test cannot be computed is marked not
/// retained with the failure recorded in `reason`.
pub fn validate_pairs(
    pairs: &[PairCandidate],
    train: &PricePanel,
    alpha: f64,
    on: CointegrateOn,
) -> Vec<PairCandidate> {
    pairs
        .par_iter()
        .map(|pair| {
            let mut out = pair.clone();
            let outcome =
                aligned_series(train, pair, on).and_then(|(y, x)| engle_granger(&y, &x).map_err(|e| e.to_string()));
            match outcome {
                Ok(res) => {
                    out.coint_stat = Some(res.statistic);
                    out.p_value = Some(res.p_value);
                    out.retained = is_retained(res.p_value, alpha);
                    out.reason = (!out.retained).then(|| format!("p-value {:.4} not below alpha {alpha}", res.p_value));
                }
                Err(msg) => {
                    out.coint_stat = None;
                    out.p_value = None;
                    out.retained = false;
                    out.reason = Some(format!("cointegration test failed: {msg}"));
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::SecurityId;
    use crate::stat_tests::testutil::{cumsum, lcg_uniform};
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn matches_statsmodels_coint() {
        // frozen from statsmodels coint(y, x, trend="c", maxlag=3, autolag="aic")
        let x = cumsum(&lcg_uniform(3, 300));
        let u = lcg_uniform(4, 300);
        let mut z = vec![0.0; 300];
        for t in 1..300 {
            z[t] = 0.5 * z[t - 1] + u[t];
        }
        let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 1.0 + 0.5 * a + b).collect();
        let r = engle_granger_with_lags(&y, &x, Some(3)).unwrap();
        assert!((r.statistic - -9.770235165793455).abs() < 1e-9);
        assert!((r.p_value - 9.458188730711527e-16).abs() < 1e-20);
        let cv = [-3.93344345, -3.35664144, -3.05866504];
        for (a, b) in r.critical_values.iter().zip(cv) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn strongly_cointegrated_pair() {
        // airline-like pair: common random-walk factor plus small idiosyncratic noise
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = cumsum(&normals(&mut rng, 500));
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let r = engle_granger(&y, &x).unwrap();
        assert!(r.statistic < -10.0, "statistic {}", r.statistic);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn independent_walks_rarely_reject() {
        let mut rejections = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
            let x = cumsum(&normals(&mut rng, 500));
            let y = cumsum(&normals(&mut rng, 500));
            if engle_granger(&y, &x).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 20, "{rejections} of 200 rejected");
    }

    #[test]
    fn input_checks() {
        assert!(matches!(
            engle_granger(&[1.0; 20], &[1.0; 20]),
            Err(StatsError::SeriesTooShort { .. })
        ));
        assert!(matches!(
            engle_granger(&[1.0; 40], &[1.0; 41]),
            Err(StatsError::LengthMismatch(40, 41))
        ));
    }

    #[test]
    fn retention_rule() {
        assert!(!is_retained(0.9779, 0.05));
        assert!(is_retained(0.000, 0.05));
        assert!(!is_retained(0.000, 0.0));
    }

    fn panel(ids: &[&str], cols: Vec<Vec<f64>>) -> PricePanel {
        let n = cols[0].len();
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let dates = (0..n as u64).map(|i| start + chrono::Days::new(i)).collect();
        PricePanel::from_closes(dates, ids.iter().map(|s| SecurityId::new(*s)).collect(), cols).unwrap()
    }

    #[test]
    fn validate_marks_each_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = cumsum(&normals(&mut rng, 300)).iter().map(|v| 100.0 + v).collect();
        let twin: Vec<f64> = base
            .iter()
            .map(|v| v + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let other: Vec<f64> = cumsum(&normals(&mut rng, 300)).iter().map(|v| 100.0 + v).collect();
        let flat = vec![50.0; 300];
        let p = panel(&["A", "B", "C", "D"], vec![base, twin, other, flat]);
        let pair = |a: &str, b: &str| PairCandidate::new(SecurityId::new(a), SecurityId::new(b), 0.0);
        let pairs = vec![pair("A", "B"), pair("C", "D"), pair("A", "Z")];

        let out = validate_pairs(&pairs, &p, 0.05, CointegrateOn::Prices);
        assert!(out[0].retained);
        assert!(out[0].p_value.unwrap() < 0.05);
        assert!(!out[1].retained);
        assert!(out[1].reason.as_deref().unwrap().contains("failed"));
        assert!(!out[2].retained);
        assert!(out[2].reason.is_some());

        let none = validate_pairs(&pairs, &p, 0.0, CointegrateOn::Returns);
        assert!(none.iter().all(|p| !p.retained));
    }
}
