use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RoutingKind;
use super::{Engine, HarnessError};
use crate::assignment::{predict_and_score, MixtureArtifact};
use crate::providers::CompletionRequest;
use crate::routing::{route_random, route_split};
use crate::scoring::ScoreReport;
use crate::task::{Demo, Metric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub id: String,
    pub expert: usize,
    pub prediction: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: ScoreReport,
    /// One entry per test item, in test order.
    pub predictions: Vec<ItemPrediction>,
    pub routed_counts: Vec<usize>,
}

fn check_model(engine: &Engine, artifact: &MixtureArtifact) -> Result<(), HarnessError> {
    let provider = engine.provider.embedding_model_id();
    if artifact.embedding_model_id != provider {
        return Err(HarnessError::ModelMismatch {
            artifact: artifact.embedding_model_id.clone(),
            provider: provider.to_string(),
        });
    }
    Ok(())
}

/// Expert index for every item of `test`, in order.
fn assign_experts(
    engine: &Engine,
    artifact: &MixtureArtifact,
    test: &[Demo],
    routing: RoutingKind,
    seed: u64,
) -> Result<Vec<usize>, HarnessError> {
    let buckets = match routing {
        RoutingKind::Centroid => {
            route_split(test, &artifact.centroids(), |texts| {
                engine.provider.embed_values(texts).map_err(HarnessError::from)
            })?
            .buckets
        }
        RoutingKind::Random => route_random(test, artifact.experts.len(), seed),
    };
    let mut expert = vec![usize::MAX; test.len()];
    let position: std::collections::HashMap<&str, usize> =
        test.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    for (c, bucket) in buckets.iter().enumerate() {
        for d in bucket {
            let i = position[d.id.as_str()];
            if expert[i] != usize::MAX {
                return Err(HarnessError::Internal(format!("test item {} routed twice", d.id)));
            }
            expert[i] = c;
        }
    }
    if expert.contains(&usize::MAX) {
        return Err(HarnessError::Internal("routing dropped a test item".into()));
    }
    Ok(expert)
}

/// Routes every test item to an expert and prompts it with that expert's
/// instruction and demos at temperature 0. Random routing uses `seed`;
/// centroid routing ignores it.
pub fn evaluate(
    engine: &Engine,
    artifact: &MixtureArtifact,
    test: &[Demo],
    metric: Metric,
    routing: RoutingKind,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    check_model(engine, artifact)?;
    let experts = assign_experts(engine, artifact, test, routing, seed)?;
    let mut routed_counts = vec![0; artifact.experts.len()];
    for &c in &experts {
        routed_counts[c] += 1;
    }
    let ctx = engine.context(metric);
    let predictions: Vec<ItemPrediction> = test
        .par_iter()
        .zip(&experts)
        .map(|(item, &c)| {
            let e = &artifact.experts[c];
            let (prediction, score) = predict_and_score(&ctx, &e.instruction, &e.demos, std::slice::from_ref(item))?
                .pop()
                .expect("one item in, one prediction out");
            Ok(ItemPrediction {
                id: item.id.clone(),
                expert: c,
                prediction,
                score,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let report = ScoreReport::new(predictions.iter().map(|p| p.score).collect(), metric)?;
    Ok(Evaluation {
        report,
        predictions,
        routed_counts,
    })
}

/// Number of test items answered correctly by exactly `h` experts, for
/// `h` in `0..=C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitHistogram {
    #[serde(rename = "C")]
    pub c: usize,
    pub counts: Vec<usize>,
}

impl HitHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `(h / C, share of items)` for each bucket.
    pub fn fractions(&self) -> Vec<(f64, f64)> {
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(h, &n)| (h as f64 / self.c as f64, n as f64 / total))
            .collect()
    }
}

fn demo_only_answer(engine: &Engine, demos: &[Demo], item: &Demo) -> Result<String, HarnessError> {
    let prompt = engine.templates.assemble("", demos, &item.input);
    Ok(engine.provider.complete(&CompletionRequest::evaluation(prompt))?)
}

/// Prompts every expert's demos (without its instruction) on every test
/// item and counts how many experts answer each item correctly. An answer
/// is correct when it earns the full score under `metric`.
pub fn hit_ratio(
    engine: &Engine,
    artifact: &MixtureArtifact,
    test: &[Demo],
    metric: Metric,
) -> Result<HitHistogram, HarnessError> {
    let c = artifact.experts.len();
    if c < 2 {
        return Err(HarnessError::Config(format!("hit ratio needs at least 2 experts, got {c}")));
    }
    let hits: Vec<usize> = test
        .par_iter()
        .map(|item| {
            let mut hits = 0;
            for e in &artifact.experts {
                let answer = demo_only_answer(engine, &e.demos, item)?;
                if engine.scorer.score(metric, &answer, item) >= 1.0 {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut counts = vec![0; c + 1];
    for h in hits {
        counts[h] += 1;
    }
    Ok(HitHistogram { c, counts })
}
