use std::path::PathBuf;

use thiserror::Error;

use crate::backtest::BacktestError;
use crate::market_data::DataError;
use crate::metrics::MetricsError;
use crate::ou_model::OuError;
use crate::pair_selection::SelectionError;
use crate::stat_tests::StatsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for pipeline orchestration. Module-level errors convert
/// into it; [`Error::exit_code`] maps each kind onto the CLI exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Selection(#[from] SelectionError),

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error(transparent)]
    Ou(#[from] OuError),

    #[error(transparent)]
    Backtest(#[from] BacktestError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error("{0}")]
    Pipeline(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(stage: &'static str, source: Error) -> Self {
        match source {
            // keep the innermost stage name
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// 1 = configuration, 2 = input data, 3 = anything that failed mid-pipeline.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } | Error::Csv { .. } | Error::Data(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
