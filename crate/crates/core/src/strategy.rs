//! Percentile-threshold trading signals.
//!
//! A z-score series is mapped to its rank within a trailing window, and a
//! three-state machine turns those ranks into spread positions. Every
//! decision taken on day `t` becomes effective on day `t + 1`.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ou_model::{rolling_stats, OuError, OuParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub upper_pct: f64,
    pub lower_pct: f64,
    pub exit_pct: f64,
    pub pct_window: usize,
    /// Rolling mean/sd window of the baseline strategy.
    pub stats_window: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            upper_pct: 0.75,
            lower_pct: 0.25,
            exit_pct: 0.50,
            pct_window: 90,
            stats_window: 30,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ordered = 0.0 <= self.lower_pct
            && self.lower_pct < self.exit_pct
            && self.exit_pct < self.upper_pct
            && self.upper_pct <= 1.0;
        if !ordered {
            return Err(format!(
                "thresholds must satisfy 0 <= lower < exit < upper <= 1 (got {}, {}, {})",
                self.lower_pct, self.exit_pct, self.upper_pct
            ));
        }
        if self.pct_window < 10 {
            return Err(format!("pct_window must be at least 10, got {}", self.pct_window));
        }
        if self.stats_window < 2 {
            return Err(format!("stats_window must be at least 2, got {}", self.stats_window));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Position {
    Short,
    #[default]
    Flat,
    Long,
}

impl Position {
    pub fn sign(self) -> f64 {
        match self {
            Position::Short => -1.0,
            Position::Flat => 0.0,
            Position::Long => 1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        self.sign() as i8
    }

    /// One evaluation of the state machine on a day's percentile.
    pub fn step(self, pct: Option<f64>, cfg: &ThresholdConfig) -> Position {
        let Some(p) = pct else {
            return self;
        };
        match self {
            Position::Flat if p > cfg.upper_pct => Position::Short,
            Position::Flat if p < cfg.lower_pct => Position::Long,
            Position::Short if p <= cfg.exit_pct => Position::Flat,
            Position::Long if p >= cfg.exit_pct => Position::Flat,
            held => held,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionSeries {
    pub dates: Vec<NaiveDate>,
    pub position: Vec<Position>,
}

/// `(S - rolling mean) / rolling sd` over `stats_window`; `None` during
/// warm-up and wherever the rolling sd is zero.
pub fn zscore_series_baseline(values: &[f64], cfg: &ThresholdConfig) -> Vec<Option<f64>> {
    let Ok((means, sds)) = rolling_stats(values, cfg.stats_window) else {
        return vec![None; values.len()];
    };
    values
        .iter()
        .zip(means.iter().zip(&sds))
        .map(|(s, (m, sd))| match (m, sd) {
            (Some(m), Some(sd)) if *sd > 0.0 => Some((s - m) / sd),
            _ => None,
        })
        .collect()
}

/// `(S - mu) / sigma` with fixed calibrated parameters.
pub fn zscore_series_ou(values: &[f64], params: &OuParams) -> Result<Vec<f64>, OuError> {
    if params.sigma == 0.0 {
        return Err(OuError::ZeroSigma);
    }
    Ok(values.iter().map(|s| (s - params.mu) / params.sigma).collect())
}

/// Mid-rank percentile of `z[t]` within `z[t-window+1..=t]`:
/// `(#{< z[t]} + 0.5 #{== z[t]}) / window`, where the count of equal values
/// includes `z[t]` itself. Defined only once the window holds `window`
/// defined values.
pub fn rolling_percentile(z: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; z.len()];
    if window == 0 {
        return out;
    }
    // ascending under total_cmp, which agrees with `<` on finite values
    let mut sorted: Vec<f64> = Vec::with_capacity(window);
    for t in 0..z.len() {
        if let Some(v) = z[t] {
            let at = sorted.partition_point(|x| x.total_cmp(&v).is_lt());
            sorted.insert(at, v);
        }
        if t >= window {
            if let Some(old) = z[t - window] {
                let at = sorted.partition_point(|x| x.total_cmp(&old).is_lt());
                sorted.remove(at);
            }
        }
        if let (Some(v), true) = (z[t], t + 1 >= window && sorted.len() == window) {
            let less = sorted.partition_point(|x| *x < v);
            let not_greater = sorted.partition_point(|x| *x <= v);
            let equal = not_greater - less;
            out[t] = Some((less as f64 + 0.5 * equal as f64) / window as f64);
        }
    }
    out
}

/// Runs the state machine from flat. `position[0]` is flat; `position[t+1]`
/// is the state after evaluating `pct[t]`.
pub fn generate_positions(pct: &[Option<f64>], cfg: &ThresholdConfig) -> Vec<Position> {
    let mut out = Vec::with_capacity(pct.len());
    let mut state = Position::Flat;
    for p in pct {
        out.push(state);
        state = state.step(*p, cfg);
    }
    out
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use Position::{Flat, Long, Short};

    fn naive_percentile(z: &[Option<f64>], t: usize, w: usize) -> Option<f64> {
        if t + 1 < w {
            return None;
        }
        let win: Option<Vec<f64>> = z[t + 1 - w..=t].iter().copied().collect();
        let win = win?;
        let v = z[t]?;
        let less = win.iter().filter(|x| **x < v).count() as f64;
        let eq = win.iter().filter(|x| **x == v).count() as f64;
        Some((less + 0.5 * eq) / w as f64)
    }

    #[test]
    fn config_validation() {
        assert!(ThresholdConfig::default().validate().is_ok());
        let bad = ThresholdConfig {
            lower_pct: 0.6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let short = ThresholdConfig {
            pct_window: 5,
            ..Default::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn baseline_zscores() {
        let cfg = ThresholdConfig::default();
        assert!(zscore_series_baseline(&[2.0; 60], &cfg).iter().all(Option::is_none));

        // window of 30 whose mean is its last value
        let mut v = vec![0.0];
        v.extend((0..28).map(|t| if t % 2 == 0 { 1.5 } else { -1.5 }));
        v.push(0.0);
        let z = zscore_series_baseline(&v, &cfg);
        assert!(z[..29].iter().all(Option::is_none));
        assert!(z[29].unwrap().abs() < 1e-12);

        assert!(zscore_series_baseline(&[1.0, 2.0], &cfg).iter().all(Option::is_none));
    }

    #[test]
    fn baseline_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut s = 0.0;
        let v: Vec<f64> = (0..100)
            .map(|_| {
                s += rng.random_range(-1.0..1.0);
                s
            })
            .collect();
        let cfg = ThresholdConfig::default();
        let z = zscore_series_baseline(&v, &cfg);
        for t in 29..100 {
            let win = &v[t - 29..=t];
            let m = win.iter().sum::<f64>() / 30.0;
            let sd = (win.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 29.0).sqrt();
            assert!((z[t].unwrap() - (v[t] - m) / sd).abs() < 1e-9);
        }
    }

    #[test]
    fn ou_zscores() {
        let p = crate::ou_model::ou_from_ar1(0.5, 1.0, 0.1, 1.0).unwrap();
        assert!(zscore_series_ou(&[p.mu; 5], &p).unwrap().iter().all(|z| *z == 0.0));
        let values = [1.2, 2.5, 1.9, 3.0];
        let z = zscore_series_ou(&values, &p).unwrap();
        for (s, zs) in values.iter().zip(&z) {
            assert_eq!(*zs, crate::ou_model::zscore(*s, &p).unwrap());
        }
        let bumped: Vec<f64> = values.iter().map(|s| s + p.sigma).collect();
        for (a, b) in zscore_series_ou(&bumped, &p).unwrap().iter().zip(&z) {
            assert!((a - (b + 1.0)).abs() < 1e-12);
        }
        let flat = OuParams { sigma: 0.0, ..p };
        assert_eq!(zscore_series_ou(&values, &flat), Err(OuError::ZeroSigma));
    }

    #[test]
    fn percentile_examples() {
        let w = 10;
        let inc: Vec<Option<f64>> = (0..25).map(|t| Some(t as f64)).collect();
        let pct = rolling_percentile(&inc, w);
        assert!(pct[..9].iter().all(Option::is_none));
        for t in 9..25 {
            assert_eq!(pct[t], naive_percentile(&inc, t, w));
            assert_eq!(pct[t], Some(9.5 / 10.0));
        }
        let dec: Vec<Option<f64>> = (0..25).map(|t| Some(-(t as f64))).collect();
        assert!(rolling_percentile(&dec, w)[9..].iter().all(|p| *p == Some(0.05)));
        let flat = vec![Some(1.5); 25];
        assert!(rolling_percentile(&flat, w)[9..].iter().all(|p| *p == Some(0.5)));
    }

    #[test]
    fn percentile_needs_full_defined_window() {
        let mut z: Vec<Option<f64>> = (0..30).map(|t| Some((t as f64 * 1.3).sin())).collect();
        z[15] = None;
        let pct = rolling_percentile(&z, 10);
        for t in 0..30 {
            assert_eq!(pct[t], naive_percentile(&z, t, 10), "t = {t}");
        }
        assert!(pct[15..=24].iter().all(Option::is_none));
        assert!(pct[25].is_some());
    }

    #[test]
    fn state_machine_examples() {
        let cfg = ThresholdConfig::default();
        assert!(generate_positions(&[Some(0.5); 20], &cfg).iter().all(|p| *p == Flat));

        let pct = [Some(0.8), Some(0.8), Some(0.45), Some(0.5)];
        assert_eq!(generate_positions(&pct, &cfg), [Flat, Short, Short, Flat]);

        let pct = [Some(0.1), Some(0.6), Some(0.5)];
        assert_eq!(generate_positions(&pct, &cfg), [Flat, Long, Flat]);

        // exit dominates: short exits on a deep low, long only entered next evaluation
        let pct = [Some(0.9), Some(0.1), Some(0.1), Some(0.3)];
        assert_eq!(generate_positions(&pct, &cfg), [Flat, Short, Flat, Long]);

        // undefined days hold the state
        let pct = [Some(0.9), None, None, Some(0.5), None];
        assert_eq!(generate_positions(&pct, &cfg), [Flat, Short, Short, Short, Flat]);

        // touching the exit level closes either side
        assert_eq!(Short.step(Some(0.5), &cfg), Flat);
        assert_eq!(Long.step(Some(0.5), &cfg), Flat);
        assert_eq!(Flat.step(Some(0.75), &cfg), Flat);
        assert_eq!(Flat.step(Some(0.25), &cfg), Flat);
    }

    fn arb_pct() -> impl Strategy<Value = Vec<Option<f64>>> {
        proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..=1.0), 1..200)
    }

    proptest! {
        #[test]
        fn percentile_matches_naive(
            vals in proptest::collection::vec(proptest::option::weighted(0.95, -3i32..3), 1..150),
            w in 10usize..40,
        ) {
            // small integer range forces plenty of ties
            let z: Vec<Option<f64>> = vals.iter().map(|v| v.map(|x| x as f64 * 0.5)).collect();
            let pct = rolling_percentile(&z, w);
            for t in 0..z.len() {
                prop_assert_eq!(pct[t], naive_percentile(&z, t, w));
            }
        }

        #[test]
        fn positions_only_step_through_flat(pct in arb_pct()) {
            let pos = generate_positions(&pct, &ThresholdConfig::default());
            for w in pos.windows(2) {
                prop_assert!(!matches!((w[0], w[1]), (Short, Long) | (Long, Short)));
            }
            prop_assert_eq!(pos[0], Flat);
        }

        #[test]
        fn no_lookahead(pct in arb_pct(), cut in 0usize..200, junk in proptest::collection::vec(0.0f64..=1.0, 200)) {
            let cfg = ThresholdConfig::default();
            let cut = cut % pct.len();
            let base = generate_positions(&pct, &cfg);
            let mut altered = pct.clone();
            for (t, p) in altered.iter_mut().enumerate().skip(cut + 1) {
                *p = Some(junk[t]);
            }
            let other = generate_positions(&altered, &cfg);
            let through = (cut + 1).min(pct.len() - 1);
            prop_assert_eq!(&base[..=through], &other[..=through]);
            prop_assert_eq!(&generate_positions(&pct[..=cut], &cfg)[..], &base[..=cut]);
        }

        #[test]
        fn raising_upper_never_adds_short_entries(pct in arb_pct(), bump in 0.0f64..0.24) {
            let lo = ThresholdConfig::default();
            let hi = ThresholdConfig { upper_pct: lo.upper_pct + bump, ..lo };
            let entries = |cfg: &ThresholdConfig| {
                generate_positions(&pct, cfg).windows(2).filter(|w| w[0] == Flat && w[1] == Short).count()
            };
            prop_assert!(entries(&hi) <= entries(&lo));
        }
    }
}
