use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{build_baseline, evaluate_baseline};
use super::build::build_mop;
use super::config::{BenchConfig, ExperimentConfig, Method, Settings};
use super::evaluate::evaluate;
use super::report::report;
use super::{Engine, HarnessError, RunResult};
use crate::assignment::SearchKind;
use crate::task::{load_task, TaskDataset};

/// Outcome of one (task, method, seed) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub test_score: f64,
    /// Instruction-generation calls charged to the job's provider.
    pub generation_calls: u64,
    pub artifact_digest: String,
}

/// Runs one job on a fresh provider built from `settings`.
pub fn run_seed(settings: &Settings, task: &TaskDataset, method: Method, seed: u64) -> Result<SeedRun, HarnessError> {
    run_seed_with(&Engine::new(settings.provider()?), settings, task, method, seed)
}

/// Runs one job on `engine`. Generation calls are read from the engine's
/// budget, so the engine should be fresh.
pub fn run_seed_with(
    engine: &Engine,
    settings: &Settings,
    task: &TaskDataset,
    method: Method,
    seed: u64,
) -> Result<SeedRun, HarnessError> {
    let (test_score, artifact_digest) = match method {
        Method::Mop | Method::MopVariant(_) => {
            let kind = match method {
                Method::MopVariant(kind) => kind,
                _ => SearchKind::Rbjs,
            };
            let built = build_mop(engine, task, settings, kind, seed)?;
            let ev = evaluate(engine, &built.artifact, &task.test, task.metric, settings.routing, seed)?;
            (ev.report.mean, built.artifact.digest())
        }
        _ => {
            let prompt = build_baseline(engine, task, settings, method, seed)?;
            let ev = evaluate_baseline(engine, &prompt, &task.train, &task.test, task.metric)?;
            (ev.report.mean, prompt.digest())
        }
    };
    let generation_calls = engine.provider.budget().used_generations();
    tracing::info!(task = %task.name, %method, seed, test_score, generation_calls, "job done");
    Ok(SeedRun {
        seed,
        test_score,
        generation_calls,
        artifact_digest,
    })
}

/// Runs every seed of one experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    cfg.settings.validate()?;
    let task = load_task(&cfg.task_path)?;
    let runs: Vec<SeedRun> = cfg
        .settings
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&cfg.settings, &task, cfg.method, seed))
        .collect::<Result<_, _>>()?;
    Ok(RunResult::from_runs(cfg.method, task.name, &runs))
}

/// Runs every (task, method, seed) job on a pool of `cfg.workers`
/// threads. Each job gets its own provider and derives all randomness
/// from its seed, so results do not depend on scheduling. Results come
/// back ordered by task, then method, as listed in the config.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<RunResult>, HarnessError> {
    cfg.validate()?;
    let tasks: Vec<TaskDataset> = cfg.tasks.iter().map(load_task).collect::<Result<_, _>>()?;
    let settings = &cfg.settings;
    let cells: Vec<(usize, Method)> = (0..tasks.len())
        .flat_map(|t| cfg.methods.iter().map(move |&m| (t, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(t, method)| {
                let runs: Vec<SeedRun> = settings
                    .seeds
                    .par_iter()
                    .map(|&seed| run_seed(settings, &tasks[t], method, seed))
                    .collect::<Result<_, _>>()?;
                Ok(RunResult::from_runs(method, tasks[t].name.clone(), &runs))
            })
            .collect()
    })
}

/// Runs the bench grid and writes its report files into `out_dir`.
pub fn bench(cfg: &BenchConfig, out_dir: impl AsRef<Path>) -> Result<(Vec<RunResult>, Vec<PathBuf>), HarnessError> {
    let results = run_bench(cfg)?;
    let files = report(&results, out_dir, cfg.tie_threshold)?;
    Ok((results, files))
}
