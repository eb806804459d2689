//! Config-driven experiment runs: pruning sweeps with per-row isolation,
//! CSV reports, SVG plots and correlation analysis.

mod analysis;
mod config;
mod plot;
mod sweep;

pub use analysis::{correlate, read_numeric_columns, Correlation, RowFilter, ANALYSIS_HEADER};
pub use config::{Arch, DatasetSpec, ExperimentConfig, MisSettings, ModelSpec, PlanEntry};
pub use plot::{emit_plot, render_svg, Series};
pub use sweep::{summarize,
    mis_rows_for, run_sweep, train_base, write_mis_csv, write_sweep_csv, MisRow, SummaryRow, SweepReport, SweepRow, TrainingRow, MIS_HEADER, SWEEP_HEADER,
};

use crate::data::DataError;
use crate::mis::MisError;
use crate::model::{CheckpointError, ModelError};
use crate::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {missing:?} not found; available columns: {available:?}")]
    MissingColumn { missing: String, available: Vec<String> },
    #[error("column {column:?} row {row}: {value:?} is not a number")]
    NotNumeric { column: String, row: usize, value: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mis(#[from] MisError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// Configuration problems, as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::MissingColumn { .. })
    }
}
