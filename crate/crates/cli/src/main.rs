use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pairs_core::backtest::StrategyKind;
use pairs_core::config::{RunConfig, StrategySet};
use pairs_core::pipeline::{self, RunPaths};
use pairs_core::synth::{cmd_synth, SynthConfig};
use pairs_core::{Error, Result};

/// Pairs-trading research pipeline.
#[derive(Debug, Parser)]
#[command(name = "pairs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage and write the manifest and reports.
    Run(Common),
    /// Generate a synthetic price file, its true parameters and a run config.
    Synth(SynthArgs),
    /// Load, filter and align prices into a panel CSV.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank all pairs by return distance and pick disjoint pairs.
    SelectPairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Full ranking table.
        #[arg(long)]
        ranked_output: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cointegration-test selected pairs.
    ValidatePairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit OU parameters to retained pairs.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Trade retained pairs over the test window.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Directory receiving one sub-directory per strategy.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute metrics and report files from backtest output.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding one backtest sub-directory per strategy.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Config file plus overrides shared by every pipeline command.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// baseline, ou or both.
    #[arg(long)]
    strategy: Option<StrategySet>,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    upper_pct: Option<f64>,
    #[arg(long)]
    lower_pct: Option<f64>,
    #[arg(long)]
    exit_pct: Option<f64>,
    #[arg(long)]
    pct_window: Option<usize>,
    #[arg(long)]
    stats_window: Option<usize>,
    /// Refit OU parameters daily on this many trailing days (0 = off).
    #[arg(long)]
    ou_refit_window: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            seed,
            strategy,
            max_pairs,
            alpha,
            upper_pct,
            lower_pct,
            exit_pct,
            pct_window,
            stats_window,
            ou_refit_window
        );
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pairs: usize,
    #[arg(long, default_value_t = 750)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent random walks added alongside the pairs.
    #[arg(long, default_value_t = 0)]
    decoys: usize,
    /// Mean-reversion rate range, per year.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    lambda: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    mu: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    sigma: Option<Vec<f64>>,
}

fn pair_of(v: &Option<Vec<f64>>, default: (f64, f64)) -> (f64, f64) {
    v.as_ref().map_or(default, |v| (v[0], v[1]))
}

fn or_default(path: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    path.clone().unwrap_or(default)
}

fn dir_for(root: &Path, s: StrategyKind) -> PathBuf {
    RunPaths::new(root).strategy_dir(s)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let summary = pipeline::cmd_run(&cfg)?;
            for (name, m) in &summary.metrics {
                println!("{name}");
                for (label, value) in m.labelled() {
                    let v = value.map_or("undefined".to_string(), pairs_core::metrics::fmt6);
                    println!("  {label:<30} {v}");
                }
            }
            println!("outputs written to {}", cfg.out_dir.display());
        }
        Command::Synth(a) => {
            let defaults = SynthConfig::default();
            let cfg = SynthConfig {
                n_pairs: a.pairs,
                n_days: a.days,
                seed: a.seed,
                n_decoys: a.decoys,
                lambda_range: pair_of(&a.lambda, defaults.lambda_range),
                mu_range: pair_of(&a.mu, defaults.mu_range),
                sigma_range: pair_of(&a.sigma, defaults.sigma_range),
                ..defaults
            };
            let data = cmd_synth(&cfg, &a.out)?;
            println!(
                "{} securities x {} days written to {}",
                data.tickers.len(),
                data.dates.len(),
                a.out.join("prices.csv").display()
            );
        }
        Command::Ingest { common, output } => {
            let cfg = common.config()?;
            let out = or_default(&output, RunPaths::new(&cfg.out_dir).panel());
            let s = pipeline::stage_ingest(&cfg, &out)?;
            println!("{} securities x {} dates -> {}", s.securities, s.dates, out.display());
        }
        Command::SelectPairs {
            common,
            panel,
            ranked_output,
            output,
        } => {
            let cfg = common.config()?;
            let p = RunPaths::new(&cfg.out_dir);
            let out = or_default(&output, p.selected());
            let s = pipeline::stage_select(
                &cfg,
                &or_default(&panel, p.panel()),
                &or_default(&ranked_output, p.ranked()),
                &out,
            )?;
            println!("{} of {} pairs selected -> {}", s.selected, s.candidates, out.display());
        }
        Command::ValidatePairs {
            common,
            panel,
            pairs,
            output,
        } => {
            let cfg = common.config()?;
            let p = RunPaths::new(&cfg.out_dir);
            let out = or_default(&output, p.validated());
            let s = pipeline::stage_validate(
                &cfg,
                &or_default(&panel, p.panel()),
                &or_default(&pairs, p.selected()),
                &out,
            )?;
            println!("{} of {} pairs retained -> {}", s.retained, s.tested, out.display());
        }
        Command::Calibrate {
            common,
            panel,
            pairs,
            output,
        } => {
            let cfg = common.config()?;
            let p = RunPaths::new(&cfg.out_dir);
            let out = or_default(&output, p.calibration());
            let s = pipeline::stage_calibrate(
                &cfg,
                &or_default(&panel, p.panel()),
                &or_default(&pairs, p.validated()),
                &out,
            )?;
            println!("{} pairs calibrated -> {}", s.calibrated, out.display());
        }
        Command::Backtest {
            common,
            panel,
            pairs,
            calibration,
            output,
        } => {
            let cfg = common.config()?;
            let p = RunPaths::new(&cfg.out_dir);
            let root = or_default(&output, p.root.clone());
            for s in cfg.strategy.kinds() {
                let dir = dir_for(&root, s);
                let summary = pipeline::stage_backtest(
                    &cfg,
                    s,
                    &or_default(&panel, p.panel()),
                    &or_default(&pairs, p.validated()),
                    &or_default(&calibration, p.calibration()),
                    &dir,
                )?;
                println!("{s}: {} pairs traded -> {}", summary.traded, dir.display());
            }
        }
        Command::Report { common, input, output } => {
            let cfg = common.config()?;
            let input = or_default(&input, cfg.out_dir.clone());
            let output = or_default(&output, input.clone());
            for s in cfg.strategy.kinds() {
                let dir = dir_for(&output, s);
                let m = pipeline::stage_report(&cfg, s, &dir_for(&input, s), &dir)?;
                println!("{s} -> {}", dir.display());
                print!("{}", m.to_json());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
