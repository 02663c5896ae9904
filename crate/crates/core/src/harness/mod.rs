//! Experiment configuration, training orchestration, de novo generation,
//! metrics and CSV/SVG reporting.

mod config;
mod metrics;
mod pipeline;
mod report;
mod sweep;

use thiserror::Error;

use crate::chem::DatasetError;
use crate::codec::CodecError;
use crate::diffcore::DiffError;
use crate::flows::FlowError;

pub use config::{Experiment, ExperimentConfig, DATA_ENV};
pub use metrics::{evaluate, evaluate_smiles, MetricsReport, Scores};
pub use pipeline::{generate_molecules, prepare_dataset, train_experiment, Codec, FlowModel, Pipeline, TrainingRecord};
pub use report::{read_csv, render_svgs, write_csv, write_report, SVG_FILES};
pub use sweep::{run_experiment, run_sweep, sweep_configs, SweepOptions};
pub use report::CSV_FILE;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("checkpoint does not match the configuration: {0}")]
    CheckpointMismatch(String),
    #[error("no candidates to evaluate")]
    EmptyCandidateSet,
    #[error("nothing to report")]
    NoReports,
    #[error("cannot write {path}: {reason}")]
    OutputUnwritable { path: String, reason: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub(crate) fn unwritable(path: &std::path::Path, reason: impl std::fmt::Display) -> HarnessError {
    HarnessError::OutputUnwritable {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}
