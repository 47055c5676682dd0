//! Experiment orchestration on top of `rosetta-core`: hyperparameter
//! search, the reproducibility, sequential and ablation protocols, report
//! emission and embedding export.

pub mod config;
pub mod grid;
pub mod protocols;
pub mod report;
pub mod runner;

use std::path::PathBuf;

use rosetta_core::datasets::DatasetError;
use rosetta_core::distill::DistillError;
use rosetta_core::linalg::LinalgError;
use rosetta_core::metrics::MetricsError;
use rosetta_core::vae::VaeError;
use thiserror::Error;

pub use config::{AblationAxis, ArchSpec, ArchVariant, DatasetSpec, ExperimentConfig, GridRange, GridSpec, Method, Protocol};
pub use grid::{grid_search, select_best, GridCell, GridResult};
pub use protocols::{
    export_embeddings, load_dataset, run_ablation, run_grid, run_protocol, run_reproducibility, run_sequential,
    sequential_lsd, ProtocolOutput,
};
pub use report::{resummarize, write_report, RawRow, Report, ReportMeta};
pub use runner::{MethodSettings, RunRecord, WORKERS_ENV};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl HarnessError {
    /// Short machine-readable category for the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Report(_) => "report",
            HarnessError::Protocol(_) => "protocol",
            HarnessError::Vae(_) => "model",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::Distill(_) => "distill",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Linalg(_) => "linalg",
        }
    }
}
