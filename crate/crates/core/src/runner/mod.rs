//! Experiment harness: configs, the training loop, logging, and sweeps.

pub mod config;
pub mod output;
pub mod train;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{self, DataError, Dataset};
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::norms::NormError;
use crate::optim::OptimError;

pub use config::{DatasetSpec, ExperimentConfig, MarginNorm, OptimizerChoice, Variant};
pub use output::{AggregateRow, RunSummary, CSV_SCHEMA_VERSION};
pub use train::{execute, DiagnosticsRow, RunPlan, RunResult, StepTrace, StopReason};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Builds the dataset for a run; `seed` is used unless the descriptor fixes one.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, RunError> {
    Ok(match spec {
        DatasetSpec::Synth { m, d, margin_floor, seed: s } => data::synth_separable(*m, *d, *margin_floor, s.unwrap_or(seed))?,
        DatasetSpec::Mnist { images, labels, m, seed: s, cache_dir } => {
            data::cached_even_odd_subset(images, labels, *m, s.unwrap_or(seed), cache_dir.as_deref())?
        }
        DatasetSpec::Cache { path } => data::load_cache(path)?,
    })
}

/// Every (variant, seed) pair, variants outermost.
pub fn plans(config: &ExperimentConfig) -> Result<Vec<RunPlan>, RunError> {
    let layout = config.model.layout()?;
    let mut out = Vec::new();
    for v in config.variants()? {
        let optimizer = v.optimizer.resolve(&layout)?;
        let schedule = v.eta0.map_or(config.schedule, |e| config.schedule.with_eta0(e));
        for &seed in &config.seeds {
            out.push(RunPlan { experiment: config.name(), variant: v.name.clone(), optimizer: optimizer.clone(), schedule, seed });
        }
    }
    Ok(out)
}

pub fn execute_plan(config: &ExperimentConfig, plan: &RunPlan) -> Result<RunResult, RunError> {
    let data = load_dataset(&config.dataset, plan.seed)?;
    execute(config, plan, &data)
}

fn persist(config: &ExperimentConfig, result: &RunResult) -> Result<RunSummary, RunError> {
    let dir = config.effective_output_dir();
    let csv_path = dir.join(format!("{}.csv", result.plan.file_stem()));
    output::write_text(&csv_path, &output::rows_csv(result)?)?;
    Ok(RunSummary::from_result(result, config.loss.loss(0.0), Some(csv_path)))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub csv_schema_version: u32,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentReport {
    pub fn all_finished(&self) -> bool {
        self.runs.iter().all(|r| r.stop != StopReason::NonFinite)
    }
}

/// Runs every plan in order, writing one CSV per run and a JSON summary.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    let mut runs = Vec::new();
    for plan in plans(config)? {
        log::info!("running {}", plan.file_stem());
        let result = execute_plan(config, &plan)?;
        runs.push(persist(config, &result)?);
    }
    let report = ExperimentReport { experiment: config.name(), csv_schema_version: CSV_SCHEMA_VERSION, runs, aggregate: Vec::new() };
    output::write_json(&config.effective_output_dir().join(format!("{}_summary.json", config.name())), &report)?;
    Ok(report)
}

/// Runs all plans in parallel and adds per-(variant, norm) margin aggregates.
pub fn sweep(config: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    let plans = plans(config)?;
    let results: Vec<Result<RunResult, RunError>> = plans.par_iter().map(|p| execute_plan(config, p)).collect();
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(persist(config, &r?)?);
    }
    let aggregate = output::aggregate(&runs);
    let dir = config.effective_output_dir();
    output::write_text(&dir.join(format!("{}_aggregate.csv", config.name())), &output::aggregate_csv(&aggregate))?;
    let report = ExperimentReport { experiment: config.name(), csv_schema_version: CSV_SCHEMA_VERSION, runs, aggregate };
    output::write_json(&dir.join(format!("{}_summary.json", config.name())), &report)?;
    Ok(report)
}
