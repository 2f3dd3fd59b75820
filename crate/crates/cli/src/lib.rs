//! Configuration, sweeps and CSV reports for the `flaps` command.

pub mod config;
pub mod report;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use flaps_core::dataset::DatasetError;
use flaps_core::orchestrator::OrchestratorError;

pub use config::{parse_drop, parse_k_list, DatasetSpec, ExperimentConfig, ModeName};
pub use report::{
    read_metrics_csv, read_time_csv, write_metrics_csv, write_time_csv, MetricsRow, TimeRow,
};
pub use sweep::{
    compare_report, run_sweep, run_sweep_collect, sweep_keys, SweepFailure, SweepKey, SweepOutcome,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset file not found: {}", .0.display())]
    MissingDataset(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("round {key} failed: {source}")]
    Round {
        key: SweepKey,
        source: OrchestratorError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed csv: {0}")]
    BadCsv(String),
    #[error("no results to write")]
    EmptyResults,
}
