//! Synthetic price files in the ingestion schema: cointegrated pairs built
//! as a random-walk leg plus an OU spread, and optional independent decoys.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ou_model::{simulate_ou_with, OuParams};

/// Time step of the simulated spreads, in years.
pub const SYNTH_DELTA: f64 = 1.0 / 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub n_days: usize,
    pub seed: u64,
    pub n_decoys: usize,
    /// Mean-reversion rate range, per year.
    pub lambda_range: (f64, f64),
    /// Spread mean range, in price units.
    pub mu_range: (f64, f64),
    /// Spread diffusion range, price units per sqrt(year).
    pub sigma_range: (f64, f64),
    /// Daily log-return sd of the random-walk legs.
    pub leg_vol: f64,
    pub start: NaiveDate,
    /// Fraction of days assigned to training in the suggested config.
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 10,
            n_days: 750,
            seed: 0,
            n_decoys: 0,
            lambda_range: (40.0, 100.0),
            mu_range: (-5.0, 5.0),
            sigma_range: (5.0, 15.0),
            leg_vol: 0.01,
            start: NaiveDate::from_ymd_opt(2018, 1, 2).expect("valid date"),
            train_fraction: 2.0 / 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if self.n_days < 2 {
            return Err(Error::Config("n_days must be at least 2".into()));
        }
        if !range_ok(self.lambda_range) || self.lambda_range.0 <= 0.0 {
            return Err(Error::Config("lambda range must be positive and ordered".into()));
        }
        if !range_ok(self.mu_range) || !range_ok(self.sigma_range) || self.sigma_range.0 < 0.0 {
            return Err(Error::Config(
                "mu and sigma ranges must be ordered; sigma non-negative".into(),
            ));
        }
        if self.leg_vol.is_nan() || self.leg_vol < 0.0 || !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(
                "leg_vol must be non-negative and train_fraction in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    /// Leg carrying the spread: `close_i = close_j + S`.
    pub sec_i: String,
    pub sec_j: String,
    pub params: OuParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `[security][t]`, aligned with `tickers`.
    pub closes: Vec<Vec<f64>>,
    pub pairs: Vec<SynthPair>,
    pub decoys: Vec<String>,
}

/// `n` consecutive weekdays from `start` (rolled forward off a weekend).
pub fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn random_walk(rng: &mut ChaCha8Rng, n: usize, vol: f64) -> Vec<f64> {
    let mut p = rng.random_range(50.0..150.0);
    (0..n)
        .map(|t| {
            if t > 0 {
                let e: f64 = StandardNormal.sample(rng);
                p *= (vol * e).exp();
            }
            p
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_days;
    let mut data = SynthData {
        dates: weekdays(cfg.start, n),
        tickers: Vec::new(),
        closes: Vec::new(),
        pairs: Vec::new(),
        decoys: Vec::new(),
    };
    for k in 0..cfg.n_pairs {
        let lambda = uniform(&mut rng, cfg.lambda_range);
        let mu = uniform(&mut rng, cfg.mu_range);
        let sigma = uniform(&mut rng, cfg.sigma_range);
        let params =
            OuParams::from_continuous(lambda, mu, sigma, SYNTH_DELTA).map_err(|e| Error::Config(e.to_string()))?;
        let mut leg_j = random_walk(&mut rng, n, cfg.leg_vol);
        let spread = simulate_ou_with(&params, n, mu, &mut rng);
        let mut leg_i: Vec<f64> = leg_j.iter().zip(&spread).map(|(p, s)| p + s).collect();
        // a common shift keeps both legs positive without touching the spread
        let low = leg_i.iter().chain(&leg_j).copied().fold(f64::INFINITY, f64::min);
        if low < 1.0 {
            let shift = 2.0 - low;
            leg_i.iter_mut().chain(leg_j.iter_mut()).for_each(|p| *p += shift);
        }
        let (ti, tj) = (format!("P{k:02}A"), format!("P{k:02}B"));
        data.pairs.push(SynthPair {
            sec_i: ti.clone(),
            sec_j: tj.clone(),
            params,
        });
        data.tickers.extend([ti, tj]);
        data.closes.extend([leg_i, leg_j]);
    }
    for k in 0..cfg.n_decoys {
        let t = format!("D{k:02}");
        data.closes.push(random_walk(&mut rng, n, cfg.leg_vol));
        data.decoys.push(t.clone());
        data.tickers.push(t);
    }
    Ok(data)
}

const HEADER: [&str; 12] = [
    "infocode",
    "dscode",
    "isin",
    "ticker",
    "dssecname",
    "region",
    "currency",
    "marketdate",
    "adjclose",
    "marketcap",
    "general_industry_desc",
    "industry_group_desc",
];

/// Long-format price file, one row per security and date.
pub fn write_prices(data: &SynthData, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(HEADER)?;
        for (k, (ticker, closes)) in data.tickers.iter().zip(&data.closes).enumerate() {
            let infocode = (1000 + k).to_string();
            let dscode = format!("DS{ticker}");
            let name = format!("Synthetic {ticker}");
            for (d, c) in data.dates.iter().zip(closes) {
                w.write_record([
                    infocode.as_str(),
                    &dscode,
                    "",
                    ticker,
                    &name,
                    "US",
                    "USD",
                    &d.to_string(),
                    &c.to_string(),
                    "5000000000",
                    "Synthetic",
                    "Synthetic",
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::csv(path, e))
}

fn write_truth(data: &SynthData, path: &Path) -> Result<()> {
    let mut out = String::from("sec_i,sec_j,lambda,mu,sigma,delta\n");
    for p in &data.pairs {
        let q = &p.params;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.sec_i, p.sec_j, q.lambda, q.mu, q.sigma, q.delta
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Run config matching the generated file: the universe starts on the
/// first date and the split falls at `train_fraction` of the days.
pub fn suggested_config(data: &SynthData, cfg: &SynthConfig) -> RunConfig {
    let n = data.dates.len();
    let cut = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    RunConfig {
        prices: "prices.csv".into(),
        out_dir: "out".into(),
        seed: cfg.seed,
        universe_start: data.dates[0],
        train_start: data.dates[0],
        train_end: data.dates[cut - 1],
        test_start: data.dates[cut],
        test_end: data.dates[n - 1],
        max_pairs: cfg.n_pairs + cfg.n_decoys / 2,
        ..RunConfig::default()
    }
}

/// Writes `prices.csv`, `truth.csv` (generating parameters) and a
/// ready-to-run `run.toml` into `out_dir`.
pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthData> {
    let data = generate(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_prices(&data, &out_dir.join("prices.csv"))?;
    write_truth(&data, &out_dir.join("truth.csv"))?;
    let run = out_dir.join("run.toml");
    std::fs::write(&run, suggested_config(&data, cfg).to_toml()).map_err(|e| Error::io(&run, e))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{load_records, LoadOptions};
    use crate::stat_tests::engle_granger;

    fn config(seed: u64, n_pairs: usize, n_days: usize, n_decoys: usize) -> SynthConfig {
        SynthConfig {
            n_pairs,
            n_days,
            seed,
            n_decoys,
            ..Default::default()
        }
    }

    #[test]
    fn one_pair_shape() {
        let dir = tempfile::tempdir().unwrap();
        let data = cmd_synth(&config(1, 1, 500, 0), dir.path()).unwrap();
        assert_eq!(data.tickers.len(), 2);
        let report = load_records(&dir.path().join("prices.csv"), &LoadOptions::default()).unwrap();
        assert_eq!(report.records.len(), 1000);
        assert!(report.skipped.is_empty());
        assert!(data.dates.iter().all(|d| d.weekday().number_from_monday() <= 5));
        let run = RunConfig::load(&dir.path().join("run.toml")).unwrap();
        assert_eq!(run.train_end, data.dates[332]);
        assert_eq!(run.test_start, data.dates[333]);
    }

    #[test]
    fn spread_is_leg_difference() {
        let data = generate(&config(2, 3, 200, 2)).unwrap();
        assert_eq!(data.tickers.len(), 8);
        assert_eq!(data.decoys, vec!["D00", "D01"]);
        for p in &data.pairs {
            assert!(p.sec_i < p.sec_j);
            assert!((40.0..100.0).contains(&p.params.lambda));
        }
        assert!(data.closes.iter().flatten().all(|c| *c > 0.0));
    }

    #[test]
    fn deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        cmd_synth(&config(3, 4, 300, 1), &a).unwrap();
        cmd_synth(&config(3, 4, 300, 1), &b).unwrap();
        for f in ["prices.csv", "truth.csv", "run.toml"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
        assert_ne!(
            generate(&config(4, 4, 300, 1)).unwrap(),
            generate(&config(3, 4, 300, 1)).unwrap()
        );
    }

    #[test]
    fn generated_pairs_cointegrate_and_decoys_do_not() {
        let mut pair_passes = 0;
        let mut decoy_rejections = 0;
        for seed in 0..100 {
            let data = generate(&config(seed, 1, 500, 2)).unwrap();
            if engle_granger(&data.closes[0], &data.closes[1]).unwrap().p_value < 0.05 {
                pair_passes += 1;
            }
            if engle_granger(&data.closes[2], &data.closes[3]).unwrap().p_value < 0.05 {
                decoy_rejections += 1;
            }
        }
        assert!(pair_passes >= 95, "{pair_passes} of 100 pairs passed");
        assert!(decoy_rejections <= 10, "{decoy_rejections} of 100 decoys rejected");
    }

    #[test]
    fn rejects_bad_config() {
        assert_eq!(generate(&config(0, 0, 100, 0)).unwrap_err().exit_code(), 1);
        let bad = SynthConfig {
            lambda_range: (5.0, 1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
