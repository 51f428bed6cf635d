//! Experiment engine: MoP builds, baselines, test evaluation, diagnostics,
//! multi-seed runs and report files.

pub mod baselines;
pub mod bench;
pub mod build;
pub mod config;
pub mod evaluate;
pub mod ood;
pub mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assignment::{AssignError, SearchContext};
use crate::clustering::ClusterError;
use crate::prompt::TemplateSet;
use crate::providers::{Provider, ProviderError};
use crate::routing::RoutingError;
use crate::scoring::{ScoreError, Scorer};
use crate::task::{Metric, TaskError};

pub use baselines::{build_baseline, evaluate_baseline, run_baseline, BaselinePrompt};
pub use bench::{run_bench, run_experiment, run_seed, SeedRun};
pub use build::{build_mop, BuildOutput};
pub use config::{BenchConfig, ExperimentConfig, Fraction, Method, ProviderConfig, RoutingKind, Settings};
pub use evaluate::{evaluate, hit_ratio, Evaluation, HitHistogram, ItemPrediction};
pub use ood::{make_ood_split, OodSplit};
pub use report::{report, win_rate_matrix, WinRateMatrix};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("degenerate task: {0}")]
    DegenerateTask(String),
    #[error("no result for method {method} on task {task}")]
    MissingCell { method: String, task: String },
    #[error("more than one result for method {method} on task {task}")]
    DuplicateCell { method: String, task: String },
    #[error("artifact was built with embedding model {artifact:?} but the provider uses {provider:?}")]
    ModelMismatch { artifact: String, provider: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("internal check failed: {0}")]
    Internal(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// A provider plus the templates and scorer every stage prompts and scores
/// with.
#[derive(Debug, Clone)]
pub struct Engine {
    pub provider: Provider,
    pub templates: TemplateSet,
    pub scorer: Scorer,
}

impl Engine {
    pub fn new(provider: Provider) -> Self {
        Self {
            provider,
            templates: TemplateSet::default(),
            scorer: Scorer::default(),
        }
    }

    pub fn context(&self, metric: Metric) -> SearchContext<'_> {
        SearchContext {
            provider: &self.provider,
            templates: &self.templates,
            scorer: &self.scorer,
            metric,
        }
    }
}

/// Test scores of one method on one task across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub task: String,
    pub seeds: Vec<u64>,
    pub per_seed_test_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the per-seed scores.
    pub std: f64,
    /// Largest number of instruction-generation calls made by any seed.
    pub budget_used: u64,
    /// SHA-256 over the per-seed artifact digests, in seed order.
    pub artifact_digest: String,
}

impl RunResult {
    pub fn from_runs(method: Method, task: impl Into<String>, runs: &[SeedRun]) -> Self {
        let scores: Vec<f64> = runs.iter().map(|r| r.test_score).collect();
        let (mean, std) = mean_std(&scores);
        let mut hasher = Sha256::new();
        for r in runs {
            hasher.update(r.artifact_digest.as_bytes());
            hasher.update(b"\n");
        }
        Self {
            method,
            task: task.into(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            per_seed_test_scores: scores,
            mean,
            std,
            budget_used: runs.iter().map(|r| r.generation_calls).max().unwrap_or(0),
            artifact_digest: hex::encode(hasher.finalize()),
        }
    }
}

/// Mean and population standard deviation; `(0, 0)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
