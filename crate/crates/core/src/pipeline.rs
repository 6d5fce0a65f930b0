//! End-to-end orchestration. Every stage reads the previous stage's files
//! and writes its own, so a full run is exactly the stages run in order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::json;

use crate::backtest::{run_backtest, BacktestResult, SkippedPair, StrategyKind};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::market_data::{build_panel, filter_universe, load_records, split_panel, PricePanel};
use crate::metrics::{compute_metrics, emit_report, MetricsRecord, TRADING_DAYS};
use crate::ou_model::{calibrate, read_calibration, write_calibration, CalibrationRow};
use crate::pair_selection::{greedy_disjoint, rank_pairs, read_pair_table, write_pair_table, PairCandidate};
use crate::stat_tests::validate_pairs;

pub const PANEL_FILE: &str = "panel.csv";
pub const RANKED_FILE: &str = "pairs_ranked.csv";
pub const SELECTED_FILE: &str = "pairs_selected.csv";
pub const VALIDATED_FILE: &str = "pairs_validated.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Standard file locations under one output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }
    pub fn panel(&self) -> PathBuf {
        self.root.join(PANEL_FILE)
    }
    pub fn ranked(&self) -> PathBuf {
        self.root.join(RANKED_FILE)
    }
    pub fn selected(&self) -> PathBuf {
        self.root.join(SELECTED_FILE)
    }
    pub fn validated(&self) -> PathBuf {
        self.root.join(VALIDATED_FILE)
    }
    pub fn calibration(&self) -> PathBuf {
        self.root.join(CALIBRATION_FILE)
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
    pub fn strategy_dir(&self, s: StrategyKind) -> PathBuf {
        self.root.join(s.as_str())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn read_panel(path: &Path) -> Result<PricePanel> {
    Ok(PricePanel::read_csv(path)?)
}

fn read_pairs(path: &Path) -> Result<Vec<PairCandidate>> {
    read_pair_table(path).map_err(|e| Error::csv(path, e))
}

fn write_pairs(path: &Path, pairs: &[PairCandidate]) -> Result<()> {
    ensure_parent(path)?;
    write_pair_table(path, pairs).map_err(|e| Error::csv(path, e))
}

fn train_test(cfg: &RunConfig, panel_path: &Path) -> Result<(PricePanel, PricePanel)> {
    let panel = read_panel(panel_path)?;
    Ok(split_panel(&panel, &cfg.split())?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub duplicates_dropped: usize,
    pub rows_skipped: usize,
    pub records_loaded: usize,
    pub records_after_filter: usize,
    pub securities: usize,
    pub dates: usize,
}

/// Price file -> filtered, aligned close panel.
pub fn stage_ingest(cfg: &RunConfig, panel_out: &Path) -> Result<IngestSummary> {
    let report = load_records(&cfg.prices, &cfg.load_options())?;
    let kept = filter_universe(&report.records, &cfg.universe());
    let panel = build_panel(&kept, &cfg.panel_options())?;
    ensure_parent(panel_out)?;
    panel.write_csv(panel_out).map_err(|e| Error::csv(panel_out, e))?;
    let summary = IngestSummary {
        rows_read: report.rows_read,
        duplicates_dropped: report.duplicates_dropped,
        rows_skipped: report.skipped.len(),
        records_loaded: report.records.len(),
        records_after_filter: kept.len(),
        securities: panel.n_securities(),
        dates: panel.n_dates(),
    };
    info!("ingest: {} securities over {} dates", summary.securities, summary.dates);
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectSummary {
    pub train_dates: usize,
    pub test_dates: usize,
    pub candidates: usize,
    pub selected: usize,
}

/// Panel -> full MSD ranking and the greedy disjoint selection.
pub fn stage_select(cfg: &RunConfig, panel: &Path, ranked_out: &Path, selected_out: &Path) -> Result<SelectSummary> {
    let (train, test) = train_test(cfg, panel)?;
    if train.n_dates() < 3 {
        return Err(Error::Pipeline(format!(
            "training window has {} dates; need at least 3",
            train.n_dates()
        )));
    }
    let ranked = rank_pairs(&train)?;
    let selected = greedy_disjoint(&ranked, cfg.max_pairs);
    write_pairs(ranked_out, &ranked)?;
    write_pairs(selected_out, &selected)?;
    info!("select: {} of {} candidate pairs", selected.len(), ranked.len());
    Ok(SelectSummary {
        train_dates: train.n_dates(),
        test_dates: test.n_dates(),
        candidates: ranked.len(),
        selected: selected.len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidateSummary {
    pub tested: usize,
    pub retained: usize,
    pub dropped: Vec<SkippedPair>,
}

fn dropped_of(pairs: &[PairCandidate]) -> Vec<SkippedPair> {
    pairs
        .iter()
        .filter(|p| !p.retained)
        .map(|p| SkippedPair {
            pair: p.key(),
            reason: p.reason.clone().unwrap_or_default(),
        })
        .collect()
}

/// Selected pairs -> the same pairs with test statistic, p-value and
/// retention flag. Fails after writing the table when nothing is retained.
pub fn stage_validate(cfg: &RunConfig, panel: &Path, selected: &Path, validated_out: &Path) -> Result<ValidateSummary> {
    let (train, _) = train_test(cfg, panel)?;
    let pairs = read_pairs(selected)?;
    let validated = validate_pairs(&pairs, &train, cfg.alpha, cfg.cointegrate_on);
    write_pairs(validated_out, &validated)?;
    let summary = ValidateSummary {
        tested: validated.len(),
        retained: validated.iter().filter(|p| p.retained).count(),
        dropped: dropped_of(&validated),
    };
    info!("validate: {} of {} pairs retained", summary.retained, summary.tested);
    if summary.retained == 0 {
        return Err(Error::Pipeline(format!(
            "no retained pairs: none of {} pairs has p-value below alpha {}",
            summary.tested, cfg.alpha
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CalibrateSummary {
    pub calibrated: usize,
    pub dropped: Vec<SkippedPair>,
}

/// Retained pairs -> OU parameters fitted on the training spread. The
/// spread starts after its last missing value.
pub fn stage_calibrate(
    cfg: &RunConfig,
    panel: &Path,
    validated: &Path,
    calibration_out: &Path,
) -> Result<CalibrateSummary> {
    let (train, _) = train_test(cfg, panel)?;
    let pairs: Vec<PairCandidate> = read_pairs(validated)?.into_iter().filter(|p| p.retained).collect();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for pair in &pairs {
        let fitted = (|| -> std::result::Result<CalibrationRow, String> {
            let i = train.index_of(&pair.sec_i).map_err(|e| e.to_string())?;
            let j = train.index_of(&pair.sec_j).map_err(|e| e.to_string())?;
            let spread: Vec<f64> = train
                .closes(i)
                .iter()
                .zip(train.closes(j))
                .map(|(a, b)| a - b)
                .collect();
            let start = spread.iter().rposition(|v| !v.is_finite()).map_or(0, |k| k + 1);
            let params = calibrate(&spread[start..], cfg.delta).map_err(|e| e.to_string())?;
            Ok(CalibrationRow::new(pair, &params))
        })();
        match fitted {
            Ok(row) => rows.push(row),
            Err(reason) => dropped.push(SkippedPair {
                pair: pair.key(),
                reason: format!("calibration failed: {reason}"),
            }),
        }
    }
    ensure_parent(calibration_out)?;
    write_calibration(calibration_out, &rows).map_err(|e| Error::csv(calibration_out, e))?;
    info!("calibrate: {} of {} pairs", rows.len(), pairs.len());
    Ok(CalibrateSummary {
        calibrated: rows.len(),
        dropped,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BacktestSummary {
    pub traded: usize,
    pub skipped: Vec<SkippedPair>,
}

/// Retained pairs (and calibration, for the OU strategy) -> position,
/// return and signal series in `out_dir`. The training window warms up
/// the rolling statistics.
pub fn stage_backtest(
    cfg: &RunConfig,
    strategy: StrategyKind,
    panel: &Path,
    validated: &Path,
    calibration: &Path,
    out_dir: &Path,
) -> Result<BacktestSummary> {
    let (train, test) = train_test(cfg, panel)?;
    let pairs: Vec<PairCandidate> = read_pairs(validated)?.into_iter().filter(|p| p.retained).collect();
    let opts = cfg.backtest_options();
    let trained: BTreeMap<_, _> = match strategy {
        StrategyKind::Ou if opts.ou_refit_window.is_none() => read_calibration(calibration)
            .map_err(|e| Error::csv(calibration, e))?
            .iter()
            .map(|r| (r.key(), r.params()))
            .collect(),
        _ => BTreeMap::new(),
    };
    let result = run_backtest(
        Some(&train),
        &test,
        &pairs,
        strategy,
        &cfg.thresholds(),
        &trained,
        &opts,
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    result.write_all(out_dir).map_err(|e| Error::csv(out_dir, e))?;
    info!(
        "backtest {strategy}: {} pairs traded, {} skipped",
        result.pairs.len(),
        result.skipped.len()
    );
    Ok(BacktestSummary {
        traded: result.pairs.len(),
        skipped: result.skipped,
    })
}

/// Backtest series -> metrics and plot-ready report files.
pub fn stage_report(
    cfg: &RunConfig,
    strategy: StrategyKind,
    backtest_dir: &Path,
    report_dir: &Path,
) -> Result<MetricsRecord> {
    let result = BacktestResult::read_all(backtest_dir, strategy).map_err(|e| Error::csv(backtest_dir, e))?;
    let metrics = compute_metrics(&result.portfolio_returns, cfg.rf_annual, TRADING_DAYS)?;
    emit_report(&result, &metrics, cfg.rf_annual, report_dir)?;
    info!(
        "report {strategy}: expected return {:.6}, sharpe {:?}",
        metrics.expected_return_ann, metrics.sharpe
    );
    Ok(metrics)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub ingest: Option<IngestSummary>,
    pub select: Option<SelectSummary>,
    pub validate: Option<ValidateSummary>,
    pub calibrate: Option<CalibrateSummary>,
    pub backtest: BTreeMap<String, BacktestSummary>,
    pub metrics: BTreeMap<String, MetricsRecord>,
}

fn run_stages(cfg: &RunConfig, paths: &RunPaths, summary: &mut RunSummary) -> Result<()> {
    let stage = |name: &'static str| move |e: Error| Error::in_stage(name, e);
    summary.ingest = Some(stage_ingest(cfg, &paths.panel()).map_err(stage("ingest"))?);
    summary.select =
        Some(stage_select(cfg, &paths.panel(), &paths.ranked(), &paths.selected()).map_err(stage("select-pairs"))?);
    summary.validate = Some(
        stage_validate(cfg, &paths.panel(), &paths.selected(), &paths.validated()).map_err(stage("validate-pairs"))?,
    );
    summary.calibrate = Some(
        stage_calibrate(cfg, &paths.panel(), &paths.validated(), &paths.calibration()).map_err(stage("calibrate"))?,
    );
    for strategy in cfg.strategy.kinds() {
        let dir = paths.strategy_dir(strategy);
        let bt = stage_backtest(
            cfg,
            strategy,
            &paths.panel(),
            &paths.validated(),
            &paths.calibration(),
            &dir,
        )
        .map_err(stage("backtest"))?;
        summary.backtest.insert(strategy.to_string(), bt);
        let m = stage_report(cfg, strategy, &dir, &dir).map_err(stage("report"))?;
        summary.metrics.insert(strategy.to_string(), m);
    }
    Ok(())
}

/// Removes files a previous run may have left, so nothing stale survives
/// a failed rerun. Only the pipeline's own file names are touched.
fn clear_outputs(paths: &RunPaths) -> Result<()> {
    let mut files = vec![
        paths.manifest(),
        paths.panel(),
        paths.ranked(),
        paths.selected(),
        paths.validated(),
        paths.calibration(),
    ];
    for s in [StrategyKind::Baseline, StrategyKind::Ou] {
        let dir = paths.strategy_dir(s);
        for name in REPORT_FILES {
            files.push(dir.join(name));
        }
    }
    for f in files {
        if f.exists() {
            fs::remove_file(&f).map_err(|e| Error::io(&f, e))?;
        }
    }
    Ok(())
}

const REPORT_FILES: [&str; 10] = [
    crate::backtest::PORTFOLIO_FILE,
    crate::backtest::PAIR_RETURNS_FILE,
    crate::backtest::POSITIONS_FILE,
    crate::backtest::SIGNALS_FILE,
    crate::backtest::SKIPPED_FILE,
    "metrics.json",
    "metrics_meta.json",
    "cumulative.csv",
    "histogram.csv",
    "correlation.csv",
];

fn manifest(cfg: &RunConfig, summary: &RunSummary, outcome: &Result<()>) -> serde_json::Value {
    let mut dropped: Vec<serde_json::Value> = Vec::new();
    let mut push = |stage: &str, list: &[SkippedPair]| {
        dropped.extend(
            list.iter()
                .map(|d| json!({"stage": stage, "pair": d.pair, "reason": d.reason})),
        );
    };
    if let Some(v) = &summary.validate {
        push("validate-pairs", &v.dropped);
    }
    if let Some(c) = &summary.calibrate {
        push("calibrate", &c.dropped);
    }
    for (name, bt) in &summary.backtest {
        push(&format!("backtest:{name}"), &bt.skipped);
    }
    json!({
        "status": if outcome.is_ok() { "complete" } else { "incomplete" },
        "error": outcome.as_ref().err().map(|e| e.to_string()),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "conventions": {
            "pair_distance": "mean squared difference of daily simple returns over the training window",
            "pair_matching": "greedy disjoint by ascending distance, ties by (sec_i, sec_j)",
            "cointegration": "Engle-Granger: OLS of sec_i on sec_j with intercept, ADF without deterministic terms on residuals, AIC lag choice, MacKinnon p-values",
            "spread": "close(sec_i) - close(sec_j)",
            "ou_delta_days": cfg.delta,
            "ou_fit": if cfg.ou_refit_window > 0 { format!("daily refit on the preceding {} days", cfg.ou_refit_window) } else { "fitted once on the training window".to_string() },
            "percentile": "trailing window including the current value, ties counted as half",
            "exit_rule": "short exits at percentile <= exit, long exits at percentile >= exit",
            "execution_lag_days": 1,
            "warmup": "training window feeds the rolling statistics; no position before both windows are full",
            "pnl": "position * (R_i - R_j) / 2 per pair, equal-weight mean over traded pairs",
            "transaction_cost_per_trade": cfg.cost_per_trade,
            "rf_annual": cfg.rf_annual,
            "periods_per_year": TRADING_DAYS,
            "sortino_target": 0.0,
            "var": "5th percentile of daily returns, linear interpolation",
        },
        "counts": {
            "ingest": summary.ingest,
            "select": summary.select,
            "validate": summary.validate.as_ref().map(|v| json!({"tested": v.tested, "retained": v.retained})),
            "calibrate": summary.calibrate.as_ref().map(|c| c.calibrated),
            "backtest": summary.backtest.iter().map(|(k, v)| (k.clone(), v.traded)).collect::<BTreeMap<_, _>>(),
        },
        "dropped_pairs": dropped,
        "metrics": summary.metrics.iter().map(|(k, m)| {
            let labelled: serde_json::Map<String, serde_json::Value> = m
                .labelled()
                .iter()
                .map(|(l, v)| (l.to_string(), v.map_or(serde_json::Value::Null, |x| json!(crate::metrics::fmt6(x)))))
                .collect();
            (k.clone(), labelled)
        }).collect::<BTreeMap<_, _>>(),
    })
}

/// Runs every stage into `cfg.out_dir` and always writes `manifest.json`,
/// marked incomplete when a stage fails.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.out_dir);
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    clear_outputs(&paths)?;
    let mut summary = RunSummary::default();
    let outcome = run_stages(cfg, &paths, &mut summary);
    let text = serde_json::to_string_pretty(&manifest(cfg, &summary, &outcome)).expect("manifest serialises") + "\n";
    let path = paths.manifest();
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    outcome.map(|_| summary)
}
