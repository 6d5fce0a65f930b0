//! Performance metrics, inter-pair correlation and plot-ready report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::BacktestResult;
use crate::error::Error;

pub const TRADING_DAYS: f64 = 252.0;
pub const DEFAULT_RF: f64 = 0.01;
pub const MIN_OBSERVATIONS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} daily returns, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("daily returns contain non-finite values")]
    NonFinite,
    #[error("Sharpe ratio undefined: volatility is zero")]
    UndefinedSharpe,
    #[error("Sortino ratio undefined: downside deviation is zero")]
    UndefinedSortino,
    #[error("correlation needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("return columns have unequal lengths")]
    Ragged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub expected_return_ann: f64,
    pub volatility_ann: f64,
    /// `None` when volatility is zero.
    pub sharpe: Option<f64>,
    /// `None` when there are no losing days.
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub var_95: f64,
    pub win_ratio: f64,
}

impl MetricsRecord {
    /// Report labels paired with values, in report order.
    pub fn labelled(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("Expected Return (Annualized)", Some(self.expected_return_ann)),
            ("Volatility (Annualized)", Some(self.volatility_ann)),
            ("Sharpe Ratio", self.sharpe),
            ("Sortino Ratio", self.sortino),
            ("Maximum Drawdown", Some(self.max_drawdown)),
            ("VaR (95%)", Some(self.var_95)),
            ("Win-Ratio", Some(self.win_ratio)),
        ]
    }

    /// JSON object with six-decimal values; undefined ratios are `null`.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        let rows = self.labelled();
        for (k, (label, value)) in rows.iter().enumerate() {
            let v = value.map_or("null".to_string(), fmt6);
            let sep = if k + 1 < rows.len() { "," } else { "" };
            let _ = writeln!(out, "  \"{label}\": {v}{sep}");
        }
        out.push_str("}\n");
        out
    }
}

/// Six decimals, with negative zero printed as zero.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

pub fn sharpe_ratio(expected_return_ann: f64, volatility_ann: f64, rf_annual: f64) -> Result<f64, MetricsError> {
    if volatility_ann == 0.0 {
        return Err(MetricsError::UndefinedSharpe);
    }
    Ok((expected_return_ann - rf_annual) / volatility_ann)
}

/// Numpy-style linear interpolation between order statistics; `sorted`
/// must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `min_t equity[t] / running_peak[t] - 1`, where the peak includes the
/// first value.
pub fn max_drawdown_from_equity(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for e in equity {
        peak = peak.max(*e);
        worst = worst.min(e / peak - 1.0);
    }
    worst
}

/// Compounded equity path starting from 1 before the first return.
pub fn equity_curve(daily: &[f64]) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(daily.iter().scan(1.0, |eq, r| {
            *eq *= 1.0 + r;
            Some(*eq)
        }))
        .collect()
}

pub fn compute_metrics(daily: &[f64], rf_annual: f64, periods_per_year: f64) -> Result<MetricsRecord, MetricsError> {
    if daily.len() < MIN_OBSERVATIONS {
        return Err(MetricsError::TooFewObservations {
            needed: MIN_OBSERVATIONS,
            got: daily.len(),
        });
    }
    if daily.iter().any(|r| !r.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    let var = daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected_return_ann = mean * periods_per_year;
    let volatility_ann = var.sqrt() * periods_per_year.sqrt();
    let downside = (daily.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n).sqrt() * periods_per_year.sqrt();

    let mut sorted = daily.to_vec();
    sorted.sort_by(f64::total_cmp);

    Ok(MetricsRecord {
        expected_return_ann,
        volatility_ann,
        sharpe: sharpe_ratio(expected_return_ann, volatility_ann, rf_annual).ok(),
        sortino: (downside > 0.0).then(|| (expected_return_ann - rf_annual) / downside),
        max_drawdown: max_drawdown_from_equity(&equity_curve(daily)),
        var_95: quantile_sorted(&sorted, 0.05),
        win_ratio: daily.iter().filter(|r| **r > 0.0).count() as f64 / n,
    })
}

/// Pearson correlations between return columns. A zero-variance column has
/// every entry in its row and column (diagonal included) set to `None`.
pub fn correlation_matrix(columns: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>, MetricsError> {
    if columns.len() < 2 {
        return Err(MetricsError::TooFewPairs(columns.len()));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(MetricsError::Ragged);
    }
    if n < MIN_OBSERVATIONS {
        return Err(MetricsError::TooFewObservations {
            needed: MIN_OBSERVATIONS,
            got: n,
        });
    }
    let centred: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centred
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let k = columns.len();
    let mut out = vec![vec![None; k]; k];
    for a in 0..k {
        if norms[a] == 0.0 {
            continue;
        }
        out[a][a] = Some(1.0);
        for b in a + 1..k {
            if norms[b] == 0.0 {
                continue;
            }
            let dot: f64 = centred[a].iter().zip(&centred[b]).map(|(x, y)| x * y).sum();
            let rho = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            out[a][b] = Some(rho);
            out[b][a] = Some(rho);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Bins of width `2 IQR n^(-1/3)` spanning the data. Falls back to a single
/// bin when that width is zero.
pub fn histogram(data: &[f64]) -> Histogram {
    if data.is_empty() {
        return Histogram {
            bin_width: 0.0,
            edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let fd = 2.0 * iqr / (data.len() as f64).cbrt();
    let range = hi - lo;
    let (bins, width) = if fd > 0.0 && range > 0.0 {
        let bins = ((range / fd).ceil() as usize).max(1);
        (bins, fd)
    } else {
        (1, range)
    };
    let mut counts = vec![0usize; bins];
    for x in &sorted {
        let k = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    Histogram {
        bin_width: width,
        edges: (0..bins).map(|k| lo + k as f64 * width).collect(),
        counts,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.json`, `metrics_meta.json`, `cumulative.csv`,
/// `histogram.csv` and, with at least two pairs, `correlation.csv` under
/// `out_dir`.
pub fn emit_report(
    result: &BacktestResult,
    metrics: &MetricsRecord,
    rf_annual: f64,
    out_dir: &Path,
) -> Result<(), Error> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("metrics.json"), &metrics.to_json())?;

    let mut cum = String::from("date,daily_return,cumulative_return\n");
    for (d, (r, eq)) in result.dates.iter().zip(
        result
            .portfolio_returns
            .iter()
            .zip(&equity_curve(&result.portfolio_returns)[1..]),
    ) {
        let _ = writeln!(cum, "{d},{},{}", fmt6(*r), fmt6(eq - 1.0));
    }
    write_file(&out_dir.join("cumulative.csv"), &cum)?;

    let h = histogram(&result.portfolio_returns);
    let mut hist = format!(
        "# bin_width={} (Freedman-Diaconis)\nbin_start,bin_end,count\n",
        fmt6(h.bin_width)
    );
    for (edge, count) in h.edges.iter().zip(&h.counts) {
        let _ = writeln!(hist, "{},{},{count}", fmt6(*edge), fmt6(edge + h.bin_width));
    }
    write_file(&out_dir.join("histogram.csv"), &hist)?;

    let correlation_note = match correlation_matrix(&result.per_pair_returns) {
        Ok(m) => {
            let keys: Vec<String> = result.pairs.iter().map(|p| p.key()).collect();
            let mut csv = format!("pair,{}\n", keys.join(","));
            for (key, row) in keys.iter().zip(&m) {
                let cells: Vec<String> = row.iter().map(|v| v.map_or("NA".into(), fmt6)).collect();
                let _ = writeln!(csv, "{key},{}", cells.join(","));
            }
            write_file(&out_dir.join("correlation.csv"), &csv)?;
            "correlation.csv".to_string()
        }
        Err(e) => format!("not computed: {e}"),
    };

    let meta = serde_json::json!({
        "strategy": result.strategy.as_str(),
        "rf_annual": rf_annual,
        "periods_per_year": TRADING_DAYS,
        "volatility": "sample standard deviation (n-1) of daily returns times sqrt(252)",
        "sortino_downside": "sqrt(mean(min(daily, 0)^2)) * sqrt(252), zero target",
        "max_drawdown": "compounded equity starting at 1",
        "var_95": "5th percentile of daily returns, linear interpolation",
        "win_ratio": "fraction of days with return > 0",
        "sharpe_defined": metrics.sharpe.is_some(),
        "sortino_defined": metrics.sortino.is_some(),
        "n_days": result.dates.len(),
        "n_pairs": result.pairs.len(),
        "skipped_pairs": result.skipped,
        "correlation": correlation_note,
    });
    let meta = serde_json::to_string_pretty(&meta).expect("metadata serialises") + "\n";
    write_file(&out_dir.join("metrics_meta.json"), &meta)?;

    Ok(())
}
