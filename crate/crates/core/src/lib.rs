//! Pairs-trading research engine: distance-based pair selection,
//! cointegration screening, Ornstein-Uhlenbeck spread calibration,
//! percentile-threshold signals, backtesting and performance reporting.

pub mod backtest;
pub mod config;
pub mod error;
pub mod market_data;
pub mod metrics;
pub mod ou_model;
pub mod pair_selection;
pub mod pipeline;
pub mod stat_tests;
pub mod strategy;
pub mod synth;

pub use error::{Error, Result};
