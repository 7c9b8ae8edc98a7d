//! End-to-end experiments: grids, scoring, hypothesis tests, reliability
//! and analysis joins.

pub mod application;
pub mod config;
pub mod experiment;
pub mod hypotheses;
pub mod join;
pub mod records;
pub mod reliability;

pub use application::{run_application, ApplicationConfig, ApplicationOutput};
pub use config::{ConfigOverrides, ExperimentConfig, ProviderKind, ProviderSpec, RelationInput, ReplaySpec};
pub use experiment::{build_dataset, load_relations, run_experiment, score_to_dir, LoadedRelation, RunMeta, ScoreOutput};
pub use hypotheses::{hypothesis_suite, Hypothesis, SuiteOptions, TestRow};
pub use join::{analysis_join, JoinInputs, JoinOutput, JoinedRow, MrBin};
pub use records::{MrRow, ScoreKind, ScoreRecord};
pub use reliability::{reliability_report, ReliabilityReport, VarianceKey, VarianceRow, VarianceScope};

use crate::corpus::CorpusError;
use crate::dataset::DatasetError;
use crate::info_metrics::MetricError;
use crate::kg::KgError;
use crate::prob_model::ProviderError;
use crate::stats::StatsError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("empty join: {0}")]
    EmptyJoin(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

impl PipelineError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::Dataset(DatasetError::Infeasible(_)) => EXIT_INFEASIBLE,
            PipelineError::Dataset(_) => EXIT_CONFIG,
            PipelineError::Provider(_) => EXIT_PROVIDER,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}
