//! Metrics, experiment orchestration (model comparisons, ablation sweeps,
//! seed sweeps) and field plots.

mod experiment;
mod metrics;
mod plot;

use thiserror::Error;

pub use experiment::{
    ablation_configs, ablation_sweep, compare_models, run_experiment, run_seeds, Dataset, DatasetSource,
    ExperimentConfig, ExperimentOutcome, FittedModel, Imputer, ModelName, ResultRow, ResultsTable,
};
pub use metrics::{metrics, MetricReport, MAPE_ZERO_GUARD};
pub use plot::{colour, emit_field_plot, legend_label, render_field_plot, PlotSpec, PlotSummary};

use crate::baselines::BaselineError;
use crate::dan::DanError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{truth} targets but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no samples to score")]
    EmptyInput,
    #[error("model has not been fitted")]
    Unfitted,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Baseline(BaselineError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("experiment `{label}`: {message}")]
    Experiment { label: String, message: String },
}

impl From<DanError> for EvalError {
    fn from(e: DanError) -> Self {
        EvalError::Model(e.to_string())
    }
}

impl From<BaselineError> for EvalError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Unfitted => EvalError::Unfitted,
            other => EvalError::Baseline(other),
        }
    }
}
