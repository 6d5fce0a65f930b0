//! Run configuration: one flat TOML file holding every knob of a run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestOptions, StrategyKind};
use crate::error::{Error, Result};
use crate::market_data::{ColumnSchema, DateSplit, LoadOptions, PanelOptions, UniverseFilter};
use crate::metrics::DEFAULT_RF;
use crate::stat_tests::CointegrateOn;
use crate::strategy::ThresholdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategySet {
    Baseline,
    Ou,
    #[default]
    Both,
}

impl StrategySet {
    pub fn kinds(self) -> Vec<StrategyKind> {
        match self {
            StrategySet::Baseline => vec![StrategyKind::Baseline],
            StrategySet::Ou => vec![StrategyKind::Ou],
            StrategySet::Both => vec![StrategyKind::Baseline, StrategyKind::Ou],
        }
    }
}

impl FromStr for StrategySet {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "baseline" => Ok(StrategySet::Baseline),
            "ou" => Ok(StrategySet::Ou),
            "both" => Ok(StrategySet::Both),
            other => Err(format!(
                "unknown strategy set `{other}` (expected baseline, ou or both)"
            )),
        }
    }
}

impl fmt::Display for StrategySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategySet::Baseline => "baseline",
            StrategySet::Ou => "ou",
            StrategySet::Both => "both",
        })
    }
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

/// Dates are written as quoted ISO strings (`train_end = "2020-12-31"`).
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prices: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Single-character field separator of the price file.
    pub delimiter: String,
    /// Skip unparseable rows instead of failing.
    pub lenient: bool,

    pub min_marketcap: f64,
    pub region: String,
    pub currency: String,
    pub universe_start: NaiveDate,

    pub min_coverage: f64,
    pub max_fill: usize,

    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,

    pub max_pairs: usize,
    pub alpha: f64,
    pub cointegrate_on: CointegrateOn,
    /// AR(1) time step, in days.
    pub delta: f64,

    pub upper_pct: f64,
    pub lower_pct: f64,
    pub exit_pct: f64,
    pub pct_window: usize,
    pub stats_window: usize,

    pub strategy: StrategySet,
    pub rf_annual: f64,
    pub cost_per_trade: f64,
    /// Daily OU refit on this many trailing days; 0 keeps the trained fit.
    pub ou_refit_window: usize,

    pub columns: ColumnSchema,
}

impl Default for RunConfig {
    fn default() -> Self {
        let universe = UniverseFilter::default();
        let panel = PanelOptions::default();
        let thresholds = ThresholdConfig::default();
        RunConfig {
            prices: PathBuf::from("prices.csv"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            delimiter: ",".into(),
            lenient: false,
            min_marketcap: universe.min_marketcap,
            region: universe.region,
            currency: universe.currency,
            universe_start: universe.start_date,
            min_coverage: panel.min_coverage,
            max_fill: panel.max_fill,
            train_start: date(2018, 1, 1),
            train_end: date(2020, 12, 31),
            test_start: date(2021, 1, 1),
            test_end: date(2099, 12, 31),
            max_pairs: 10,
            alpha: 0.05,
            cointegrate_on: CointegrateOn::Returns,
            delta: 1.0,
            upper_pct: thresholds.upper_pct,
            lower_pct: thresholds.lower_pct,
            exit_pct: thresholds.exit_pct,
            pct_window: thresholds.pct_window,
            stats_window: thresholds.stats_window,
            strategy: StrategySet::Both,
            rf_annual: DEFAULT_RF,
            cost_per_trade: 0.0,
            ou_refit_window: 0,
            columns: ColumnSchema::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.prices = base.join(&cfg.prices);
        cfg.out_dir = base.join(&cfg.out_dir);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.delimiter.len() != 1 {
            return bad(format!(
                "delimiter must be a single ASCII character, got {:?}",
                self.delimiter
            ));
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return bad(format!("min_coverage must be in (0, 1], got {}", self.min_coverage));
        }
        if self.min_marketcap.is_nan() || self.min_marketcap < 0.0 {
            return bad(format!(
                "min_marketcap must be non-negative, got {}",
                self.min_marketcap
            ));
        }
        if self.max_pairs == 0 {
            return bad("max_pairs must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !self.rf_annual.is_finite() || self.cost_per_trade.is_nan() || self.cost_per_trade < 0.0 {
            return bad("rf_annual must be finite and cost_per_trade non-negative".into());
        }
        if self.ou_refit_window != 0 && self.ou_refit_window < 30 {
            return bad(format!(
                "ou_refit_window must be 0 (off) or at least 30, got {}",
                self.ou_refit_window
            ));
        }
        self.thresholds().validate().map_err(Error::Config)?;
        self.split().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn thresholds(&self) -> ThresholdConfig {
        ThresholdConfig {
            upper_pct: self.upper_pct,
            lower_pct: self.lower_pct,
            exit_pct: self.exit_pct,
            pct_window: self.pct_window,
            stats_window: self.stats_window,
        }
    }

    pub fn split(&self) -> DateSplit {
        DateSplit {
            train_start: self.train_start,
            train_end: self.train_end,
            test_start: self.test_start,
            test_end: self.test_end,
        }
    }

    pub fn universe(&self) -> UniverseFilter {
        UniverseFilter {
            min_marketcap: self.min_marketcap,
            region: self.region.clone(),
            currency: self.currency.clone(),
            start_date: self.universe_start,
        }
    }

    pub fn panel_options(&self) -> PanelOptions {
        PanelOptions {
            min_coverage: self.min_coverage,
            max_fill: self.max_fill,
            ..PanelOptions::default()
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            schema: self.columns.clone(),
            delimiter: self.delimiter.as_bytes()[0],
            lenient: self.lenient,
        }
    }

    pub fn backtest_options(&self) -> BacktestOptions {
        BacktestOptions {
            cost_per_trade: self.cost_per_trade,
            ou_refit_window: (self.ou_refit_window > 0).then_some(self.ou_refit_window),
            delta: self.delta,
        }
    }
}
