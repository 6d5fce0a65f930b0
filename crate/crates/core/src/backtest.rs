//! Position series to daily P&L, per pair and for the equal-weight portfolio.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{PricePanel, SecurityId};
use crate::ou_model::{calibrate, OuParams};
use crate::pair_selection::PairCandidate;
use crate::strategy::{
    generate_positions, rolling_percentile, zscore_series_baseline, zscore_series_ou, Position, ThresholdConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("no pairs to backtest")]
    NoPairs,
    #[error("test panel is empty")]
    EmptyTest,
    #[error("none of the {} pairs could be traded: {}", .0.len(), describe(.0))]
    NoIncludablePairs(Vec<SkippedPair>),
    #[error("pair {0}: {1}")]
    Pair(String, String),
    #[error("{0} positions for {1} test dates")]
    Misaligned(usize, usize),
}

fn describe(skipped: &[SkippedPair]) -> String {
    skipped
        .iter()
        .map(|s| format!("{} ({})", s.pair, s.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Baseline,
    Ou,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Ou => "ou",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(StrategyKind::Baseline),
            "ou" => Ok(StrategyKind::Ou),
            other => Err(format!("unknown strategy `{other}` (expected baseline or ou)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestOptions {
    /// Charged per unit of position change, as a return.
    pub cost_per_trade: f64,
    /// OU strategy only: refit the parameters every day on this many
    /// preceding spread values instead of using the trained parameters.
    pub ou_refit_window: Option<usize>,
    /// AR(1) time step used by refits.
    pub delta: f64,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        BacktestOptions {
            cost_per_trade: 0.0,
            ou_refit_window: None,
            delta: 1.0,
        }
    }
}

/// `z[k] = (S[k] - mu) / sigma` with parameters fitted on
/// `S[k-window..k]`; `None` until a fit is possible or when it fails.
pub fn rolling_ou_zscores(spread: &[f64], window: usize, delta: f64) -> Vec<Option<f64>> {
    (0..spread.len())
        .map(|k| {
            if k < window {
                return None;
            }
            let p = calibrate(&spread[k - window..k], delta).ok()?;
            (p.sigma > 0.0).then(|| (spread[k] - p.mu) / p.sigma)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub pair: String,
    pub reason: String,
}

/// Intermediate series of one pair over the test dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSignals {
    pub spread: Vec<f64>,
    pub z: Vec<Option<f64>>,
    pub pct: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub strategy: StrategyKind,
    pub dates: Vec<NaiveDate>,
    /// Included pairs, in input order.
    pub pairs: Vec<PairCandidate>,
    /// `[pair][t]`
    pub positions: Vec<Vec<Position>>,
    /// `[pair][t]`
    pub per_pair_returns: Vec<Vec<f64>>,
    pub portfolio_returns: Vec<f64>,
    pub signals: Vec<PairSignals>,
    pub skipped: Vec<SkippedPair>,
}

/// `position[t] * (R_i[t] - R_j[t]) / 2`. A missing return on an active day
/// counts as zero.
pub fn pair_daily_return(
    positions: &[Position],
    panel: &PricePanel,
    pair: &PairCandidate,
) -> Result<Vec<f64>, BacktestError> {
    if positions.len() != panel.n_dates() {
        return Err(BacktestError::Misaligned(positions.len(), panel.n_dates()));
    }
    let lookup = |id| {
        panel
            .index_of(id)
            .map_err(|e| BacktestError::Pair(pair.key(), e.to_string()))
    };
    let (ri, rj) = (panel.returns(lookup(&pair.sec_i)?), panel.returns(lookup(&pair.sec_j)?));
    Ok(positions
        .iter()
        .enumerate()
        .map(|(t, pos)| {
            if *pos == Position::Flat {
                return 0.0;
            }
            let r = ri[t] - rj[t];
            if r.is_finite() {
                pos.sign() * r / 2.0
            } else {
                warn!(
                    "{}: missing return on {} while active; using 0",
                    pair.key(),
                    panel.dates()[t]
                );
                0.0
            }
        })
        .collect())
}

/// Spread over `history` followed by `test`, keeping only the history after
/// its last non-finite value. Returns the spread and the history length used.
fn joined_spread(
    history: Option<&PricePanel>,
    test: &PricePanel,
    pair: &PairCandidate,
) -> Result<(Vec<f64>, usize), String> {
    let diff = |panel: &PricePanel| -> Result<Vec<f64>, String> {
        let i = panel.index_of(&pair.sec_i).map_err(|e| e.to_string())?;
        let j = panel.index_of(&pair.sec_j).map_err(|e| e.to_string())?;
        Ok(panel
            .closes(i)
            .iter()
            .zip(panel.closes(j))
            .map(|(a, b)| a - b)
            .collect())
    };
    let mut hist = match history {
        Some(h) => diff(h)?,
        None => Vec::new(),
    };
    if let Some(last_bad) = hist.iter().rposition(|v| !v.is_finite()) {
        hist.drain(..=last_bad);
    }
    let test_spread = diff(test)?;
    if test_spread.iter().any(|v| !v.is_finite()) {
        return Err("spread has missing values in the test window".into());
    }
    let h = hist.len();
    hist.extend(test_spread);
    Ok((hist, h))
}

fn run_pair(
    history: Option<&PricePanel>,
    test: &PricePanel,
    pair: &PairCandidate,
    strategy: StrategyKind,
    cfg: &ThresholdConfig,
    trained: &BTreeMap<String, OuParams>,
    opts: &BacktestOptions,
) -> Result<(Vec<Position>, Vec<f64>, PairSignals), String> {
    let (spread, h) = joined_spread(history, test, pair)?;
    let z: Vec<Option<f64>> = match strategy {
        StrategyKind::Baseline => zscore_series_baseline(&spread, cfg),
        StrategyKind::Ou if opts.ou_refit_window.is_some() => {
            rolling_ou_zscores(&spread, opts.ou_refit_window.unwrap_or_default(), opts.delta)
        }
        StrategyKind::Ou => {
            let params = trained.get(&pair.key()).ok_or("no calibrated parameters")?;
            zscore_series_ou(&spread, params)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(Some)
                .collect()
        }
    };
    let pct = rolling_percentile(&z, cfg.pct_window);
    // the first test position is decided on the last history day
    let positions = if h == 0 {
        generate_positions(&pct, cfg)
    } else {
        generate_positions(&pct[h - 1..], cfg)[1..].to_vec()
    };
    let mut returns = pair_daily_return(&positions, test, pair).map_err(|e| e.to_string())?;
    if opts.cost_per_trade != 0.0 {
        let mut prev = Position::Flat;
        for (r, pos) in returns.iter_mut().zip(&positions) {
            *r -= opts.cost_per_trade * (pos.sign() - prev.sign()).abs();
            prev = *pos;
        }
    }
    let signals = PairSignals {
        spread: spread[h..].to_vec(),
        z: z[h..].to_vec(),
        pct: pct[h..].to_vec(),
    };
    Ok((positions, returns, signals))
}

/// Runs one strategy over the test panel. `history` (normally the end of
/// the training panel) only warms up the rolling windows; positions and
/// returns cover the test dates. Pairs that cannot be traded are listed in
/// `skipped`; the portfolio is the equal-weight mean over included pairs.
pub fn run_backtest(
    history: Option<&PricePanel>,
    test: &PricePanel,
    pairs: &[PairCandidate],
    strategy: StrategyKind,
    cfg: &ThresholdConfig,
    trained: &BTreeMap<String, OuParams>,
    opts: &BacktestOptions,
) -> Result<BacktestResult, BacktestError> {
    if pairs.is_empty() {
        return Err(BacktestError::NoPairs);
    }
    if test.n_dates() == 0 {
        return Err(BacktestError::EmptyTest);
    }
    let outcomes: Vec<_> = pairs
        .par_iter()
        .map(|pair| run_pair(history, test, pair, strategy, cfg, trained, opts))
        .collect();

    let mut result = BacktestResult {
        strategy,
        dates: test.dates().to_vec(),
        pairs: Vec::new(),
        positions: Vec::new(),
        per_pair_returns: Vec::new(),
        portfolio_returns: Vec::new(),
        signals: Vec::new(),
        skipped: Vec::new(),
    };
    for (pair, outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok((pos, ret, sig)) => {
                result.pairs.push(pair.clone());
                result.positions.push(pos);
                result.per_pair_returns.push(ret);
                result.signals.push(sig);
            }
            Err(reason) => {
                warn!("{strategy}: skipping {}: {reason}", pair.key());
                result.skipped.push(SkippedPair {
                    pair: pair.key(),
                    reason,
                });
            }
        }
    }
    if result.pairs.is_empty() {
        return Err(BacktestError::NoIncludablePairs(result.skipped));
    }
    let k = result.pairs.len() as f64;
    result.portfolio_returns = (0..test.n_dates())
        .map(|t| result.per_pair_returns.iter().map(|r| r[t]).sum::<f64>() / k)
        .collect();
    Ok(result)
}

/// Shortest text that parses back to the same value.
fn exact(x: &f64) -> String {
    x.to_string()
}

impl BacktestResult {
    /// Portfolio and per-pair returns are written at full precision so the
    /// report stage can be rerun from the files alone.
    pub fn write_portfolio_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "return"])?;
        for (d, r) in self.dates.iter().zip(&self.portfolio_returns) {
            w.write_record([d.to_string(), exact(r)])?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_matrix<T>(&self, path: &Path, rows: &[Vec<T>], cell: impl Fn(&T) -> String) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.pairs.iter().map(PairCandidate::key));
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(rows.iter().map(|col| cell(&col[t])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_pair_returns_csv(&self, path: &Path) -> Result<(), csv::Error> {
        self.write_matrix(path, &self.per_pair_returns, exact)
    }

    pub fn write_positions_csv(&self, path: &Path) -> Result<(), csv::Error> {
        self.write_matrix(path, &self.positions, |p| p.as_i8().to_string())
    }

    pub fn write_skipped_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair", "reason"])?;
        for s in &self.skipped {
            w.write_record([&s.pair, &s.reason])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every series file of the result into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), csv::Error> {
        self.write_portfolio_csv(&dir.join(PORTFOLIO_FILE))?;
        self.write_pair_returns_csv(&dir.join(PAIR_RETURNS_FILE))?;
        self.write_positions_csv(&dir.join(POSITIONS_FILE))?;
        self.write_signals_csv(&dir.join(SIGNALS_FILE))?;
        self.write_skipped_csv(&dir.join(SKIPPED_FILE))
    }

    /// Rebuilds a result from [`BacktestResult::write_all`] output. Signal
    /// series are not restored.
    pub fn read_all(dir: &Path, strategy: StrategyKind) -> Result<BacktestResult, csv::Error> {
        let (dates, keys, per_pair_returns) = read_matrix(&dir.join(PAIR_RETURNS_FILE), |s| s.parse::<f64>().ok())?;
        let (_, _, positions) = read_matrix(&dir.join(POSITIONS_FILE), |s| match s {
            "-1" => Some(Position::Short),
            "0" => Some(Position::Flat),
            "1" => Some(Position::Long),
            _ => None,
        })?;
        let mut portfolio_returns = Vec::with_capacity(dates.len());
        for row in csv::Reader::from_path(dir.join(PORTFOLIO_FILE))?.records() {
            let row = row?;
            portfolio_returns.push(parse_cell(&row, 1, |s| s.parse::<f64>().ok())?);
        }
        let mut skipped = Vec::new();
        for row in csv::Reader::from_path(dir.join(SKIPPED_FILE))?.deserialize() {
            skipped.push(row?);
        }
        let pairs = keys
            .iter()
            .map(|k| {
                let (a, b) = k.split_once('/').unwrap_or((k.as_str(), ""));
                let mut p = PairCandidate::new(SecurityId::new(a), SecurityId::new(b), f64::NAN);
                // keep the written orientation even if ids contain '/'
                p.sec_i = SecurityId::new(a);
                p.sec_j = SecurityId::new(b);
                p.retained = true;
                p
            })
            .collect();
        Ok(BacktestResult {
            strategy,
            dates,
            pairs,
            positions,
            per_pair_returns,
            portfolio_returns,
            signals: Vec::new(),
            skipped,
        })
    }

    /// One row per pair and test date: spread, z-score, percentile, position.
    pub fn write_signals_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair", "date", "spread", "z", "percentile", "position"])?;
        for ((pair, sig), pos) in self.pairs.iter().zip(&self.signals).zip(&self.positions) {
            for (t, d) in self.dates.iter().enumerate() {
                w.write_record([
                    pair.key(),
                    d.to_string(),
                    format!("{:.6}", sig.spread[t]),
                    opt(sig.z[t]),
                    opt(sig.pct[t]),
                    pos[t].as_i8().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub const PORTFOLIO_FILE: &str = "portfolio_returns.csv";
pub const PAIR_RETURNS_FILE: &str = "pair_returns.csv";
pub const POSITIONS_FILE: &str = "positions.csv";
pub const SIGNALS_FILE: &str = "signals.csv";
pub const SKIPPED_FILE: &str = "skipped.csv";

fn bad_cell(row: &csv::StringRecord, col: usize) -> csv::Error {
    let line = row.position().map_or(0, |p| p.line());
    csv::Error::from(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!(
            "line {line}, column {}: cannot parse {:?}",
            col + 1,
            row.get(col).unwrap_or("")
        ),
    ))
}

fn parse_cell<T>(row: &csv::StringRecord, col: usize, parse: impl Fn(&str) -> Option<T>) -> Result<T, csv::Error> {
    row.get(col).and_then(&parse).ok_or_else(|| bad_cell(row, col))
}

/// `date,<pair keys...>` matrix written by `write_matrix`, returned as
/// dates, keys and `[pair][t]` columns.
type Matrix<T> = (Vec<NaiveDate>, Vec<String>, Vec<Vec<T>>);

fn read_matrix<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<Matrix<T>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    let keys: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut cols: Vec<Vec<T>> = keys.iter().map(|_| Vec::new()).collect();
    for row in r.records() {
        let row = row?;
        dates.push(parse_cell(&row, 0, |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())?);
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(parse_cell(&row, k + 1, &parse)?);
        }
    }
    Ok((dates, keys, cols))
}
