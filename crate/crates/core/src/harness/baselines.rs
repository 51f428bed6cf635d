//! Single-prompt baselines: the APE instruction alone or combined with
//! random, centroid-nearest or per-query nearest-neighbour demos.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::build::demo_texts;
use super::config::{ExperimentConfig, Method, Settings};
use super::evaluate::{Evaluation, ItemPrediction};
use super::{Engine, HarnessError, RunResult};
use crate::assignment::{best_candidate, generate_candidates, predict_and_score, score_instruction, ScoredCandidate};
use crate::clustering::{kmeans, squared_distance};
use crate::scoring::ScoreReport;
use crate::seed;
use crate::task::{Demo, Metric, TaskDataset};

/// A baseline's chosen prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePrompt {
    pub method: Method,
    pub task_name: String,
    pub seed: u64,
    pub embedding_model_id: String,
    pub instruction: String,
    pub candidates_evaluated: Vec<ScoredCandidate>,
    /// Demos shown with every query. Empty for APE and the
    /// nearest-neighbour baseline.
    pub demos: Vec<Demo>,
    /// Training demos retrieved per query by the nearest-neighbour baseline.
    pub neighbors: Option<usize>,
}

impl BaselinePrompt {
    pub fn to_json(&self) -> String {
        super::build::pretty_json(self)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Demos per baseline prompt: the same cap each expert gets.
fn demo_count(settings: &Settings, n: usize) -> usize {
    settings.demo_cap_fraction.cap(n).min(n)
}

fn validation_subset(task: &TaskDataset, q: Option<usize>, seed: u64) -> Vec<Demo> {
    let val = &task.validation;
    match q {
        Some(q) if q < val.len() => {
            let mut picked = sample(&mut seed::rng(seed, "ape-validation", 0), val.len(), q).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| val[i].clone()).collect()
        }
        _ => val.clone(),
    }
}

/// `total_budget` candidates generated from one sample of training demos,
/// each scored without demos on the validation subset.
fn ape_search(
    engine: &Engine,
    task: &TaskDataset,
    settings: &Settings,
    seed: u64,
) -> Result<(String, Vec<ScoredCandidate>), HarnessError> {
    if task.train.is_empty() {
        return Err(HarnessError::DegenerateTask("no training demos".into()));
    }
    let ctx = engine.context(task.metric);
    let r = settings.generation_demos.min(task.train.len());
    let candidates = generate_candidates(&ctx, &task.train, r, settings.total_budget, seed, 0)?;
    let eval_set = validation_subset(task, settings.validation_sample, seed);
    let scored: Vec<ScoredCandidate> = candidates
        .into_par_iter()
        .map(|candidate| {
            let score = score_instruction(&ctx, &candidate.text, &[], &eval_set)?;
            Ok(ScoredCandidate { candidate, score })
        })
        .collect::<Result<_, HarnessError>>()?;
    let best = best_candidate(&scored).expect("generation returned a candidate");
    Ok((best.candidate.text.clone(), scored))
}

/// Training demos nearest each of `k` K-means centroids, one per centroid,
/// in cluster order. A demo already taken by an earlier centroid is
/// skipped for the next nearest.
pub fn centroid_demos(train: &[Demo], vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Demo>, HarnessError> {
    let a = kmeans(vectors, k, seed)?;
    let mut taken = vec![false; train.len()];
    let mut out = Vec::with_capacity(k);
    for centroid in &a.centroids {
        let best = (0..train.len())
            .filter(|&i| !taken[i])
            .min_by(|&i, &j| {
                squared_distance(&vectors[i], centroid)
                    .total_cmp(&squared_distance(&vectors[j], centroid))
                    .then(i.cmp(&j))
            })
            .expect("k never exceeds the number of demos");
        taken[best] = true;
        out.push(train[best].clone());
    }
    Ok(out)
}

/// The `k` training demos nearest each query, ordered from farthest to
/// nearest so the closest demo sits next to the query. Distance ties go to
/// the earlier demo.
pub fn nearest_demos(train: &[Demo], train_vectors: &[Vec<f64>], query: &[f64], k: usize) -> Vec<Demo> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&i, &j| {
        squared_distance(&train_vectors[i], query)
            .total_cmp(&squared_distance(&train_vectors[j], query))
            .then(i.cmp(&j))
    });
    order.truncate(k);
    order.into_iter().rev().map(|i| train[i].clone()).collect()
}

/// Searches the APE instruction and attaches the method's demos.
pub fn build_baseline(
    engine: &Engine,
    task: &TaskDataset,
    settings: &Settings,
    method: Method,
    seed: u64,
) -> Result<BaselinePrompt, HarnessError> {
    if !method.is_baseline() {
        return Err(HarnessError::Config(format!("{method} is not a baseline")));
    }
    settings.validate()?;
    let (instruction, candidates_evaluated) = ape_search(engine, task, settings, seed)?;
    let n = task.train.len();
    let count = demo_count(settings, n);
    let mut neighbors = None;
    let demos = match method {
        Method::ApePlusRandomDemos => {
            let mut picked = sample(&mut seed::rng(seed, "random-demos", 0), n, count).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| task.train[i].clone()).collect()
        }
        Method::ApePlusKCentroids => {
            let vectors = engine.provider.embed_values(&demo_texts(&task.train, settings.embed_outputs))?;
            let k = settings.centroid_demos.unwrap_or(count).min(n);
            centroid_demos(&task.train, &vectors, k, seed)?
        }
        Method::ApePlusNearestNeighbor => {
            neighbors = Some(count);
            Vec::new()
        }
        _ => Vec::new(),
    };
    Ok(BaselinePrompt {
        method,
        task_name: task.name.clone(),
        seed,
        embedding_model_id: engine.provider.embedding_model_id().to_string(),
        instruction,
        candidates_evaluated,
        demos,
        neighbors,
    })
}

/// Scores a baseline prompt on `test`. The nearest-neighbour baseline
/// retrieves its demos from `train` by input embedding per query.
pub fn evaluate_baseline(
    engine: &Engine,
    prompt: &BaselinePrompt,
    train: &[Demo],
    test: &[Demo],
    metric: Metric,
) -> Result<Evaluation, HarnessError> {
    let ctx = engine.context(metric);
    let per_query_demos: Option<Vec<Vec<Demo>>> = match prompt.neighbors {
        Some(k) => {
            let inputs = |ds: &[Demo]| ds.iter().map(|d| d.input.clone()).collect::<Vec<_>>();
            let train_vectors = engine.provider.embed_values(&inputs(train))?;
            let test_vectors = engine.provider.embed_values(&inputs(test))?;
            Some(
                test_vectors
                    .iter()
                    .map(|q| nearest_demos(train, &train_vectors, q, k))
                    .collect(),
            )
        }
        None => None,
    };
    let predictions: Vec<ItemPrediction> = test
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let demos = per_query_demos.as_ref().map_or(&prompt.demos[..], |d| &d[i][..]);
            let (prediction, score) = predict_and_score(&ctx, &prompt.instruction, demos, std::slice::from_ref(item))?
                .pop()
                .expect("one item in, one prediction out");
            Ok(ItemPrediction {
                id: item.id.clone(),
                expert: 0,
                prediction,
                score,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let report = ScoreReport::new(predictions.iter().map(|p| p.score).collect(), metric)?;
    Ok(Evaluation {
        report,
        predictions,
        routed_counts: vec![test.len()],
    })
}

/// Runs a baseline config for one seed.
pub fn run_baseline(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, HarnessError> {
    if !cfg.method.is_baseline() {
        return Err(HarnessError::Config(format!("{} is not a baseline", cfg.method)));
    }
    let task = crate::task::load_task(&cfg.task_path)?;
    let run = super::bench::run_seed(&cfg.settings, &task, cfg.method, seed)?;
    Ok(RunResult::from_runs(cfg.method, task.name, &[run]))
}
