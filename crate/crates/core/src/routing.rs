//! Query routing: each query goes to the expert whose centroid is nearest in
//! embedding space.

use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{squared_distance, KernelSpec};
use crate::seed;
use crate::task::Demo;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("no centroids to route to")]
    NoCentroids,
    #[error("query has dimension {found}, centroid {index} has {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("{embeddings} embeddings returned for {queries} queries")]
    EmbeddingCount { queries: usize, embeddings: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub expert_index: usize,
    /// Squared Euclidean distance to the chosen centroid.
    pub distance: f64,
    /// Runner-up distance minus winning distance; 0 when there is one expert.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub query_id: String,
    #[serde(flatten)]
    pub route: Route,
}

/// How a query picks its expert.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutingRule {
    #[default]
    NearestCentroid,
    /// argmin of the kernel value between query and centroid. For similarity
    /// kernels this picks the least similar expert; kept for debugging only.
    KernelArgmin { kernel: KernelSpec },
}

pub fn route(query: &[f64], centroids: &[Vec<f64>]) -> Result<Route, RoutingError> {
    route_with(query, centroids, RoutingRule::NearestCentroid)
}

pub fn route_with(
    query: &[f64],
    centroids: &[Vec<f64>],
    rule: RoutingRule,
) -> Result<Route, RoutingError> {
    if centroids.is_empty() {
        return Err(RoutingError::NoCentroids);
    }
    for (index, c) in centroids.iter().enumerate() {
        if c.len() != query.len() {
            return Err(RoutingError::DimensionMismatch {
                index,
                expected: c.len(),
                found: query.len(),
            });
        }
    }
    let key = |c: &[f64]| match rule {
        RoutingRule::NearestCentroid => squared_distance(query, c),
        RoutingRule::KernelArgmin { kernel } => kernel.eval(query, c),
    };
    let mut best = 0;
    let mut best_key = f64::INFINITY;
    let mut runner_up = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let k = key(c);
        if k < best_key {
            runner_up = best_key;
            best_key = k;
            best = i;
        } else if k < runner_up {
            runner_up = k;
        }
    }
    let distance = squared_distance(query, &centroids[best]);
    let margin = match rule {
        _ if centroids.len() == 1 => 0.0,
        RoutingRule::NearestCentroid => runner_up - best_key,
        RoutingRule::KernelArgmin { .. } => {
            let mut others: Vec<f64> = centroids
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != best)
                .map(|(_, c)| squared_distance(query, c))
                .collect();
            others.sort_by(f64::total_cmp);
            (others[0] - distance).max(0.0)
        }
    };
    Ok(Route {
        expert_index: best,
        distance,
        margin,
    })
}

/// Queries partitioned by expert, with one decision per query in input
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedSplit {
    pub buckets: Vec<Vec<Demo>>,
    pub decisions: Vec<RoutingDecision>,
}

impl RoutedSplit {
    pub fn sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    /// Checks that the buckets hold every query exactly once.
    pub fn is_partition_of(&self, queries: &[Demo]) -> bool {
        let mut seen: Vec<&str> = self
            .buckets
            .iter()
            .flatten()
            .map(|d| d.id.as_str())
            .collect();
        let mut expected: Vec<&str> = queries.iter().map(|d| d.id.as_str()).collect();
        seen.sort_unstable();
        expected.sort_unstable();
        seen == expected
    }

    pub fn write_audit_log(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut out = io::BufWriter::new(std::fs::File::create(path)?);
        for d in &self.decisions {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Embeds every query input with `embed` and routes it to its nearest
/// centroid.
pub fn route_split<E, F>(queries: &[Demo], centroids: &[Vec<f64>], embed: F) -> Result<RoutedSplit, E>
where
    F: FnOnce(&[String]) -> Result<Vec<Vec<f64>>, E>,
    E: From<RoutingError>,
{
    if centroids.is_empty() {
        return Err(RoutingError::NoCentroids.into());
    }
    let mut buckets = vec![Vec::new(); centroids.len()];
    if queries.is_empty() {
        return Ok(RoutedSplit {
            buckets,
            decisions: Vec::new(),
        });
    }
    let inputs: Vec<String> = queries.iter().map(|q| q.input.clone()).collect();
    let vectors = embed(&inputs)?;
    if vectors.len() != queries.len() {
        return Err(RoutingError::EmbeddingCount {
            queries: queries.len(),
            embeddings: vectors.len(),
        }
        .into());
    }
    let mut decisions = Vec::with_capacity(queries.len());
    for (q, v) in queries.iter().zip(&vectors) {
        let r = route(v, centroids)?;
        buckets[r.expert_index].push(q.clone());
        decisions.push(RoutingDecision {
            query_id: q.id.clone(),
            route: r,
        });
    }
    Ok(RoutedSplit { buckets, decisions })
}

/// Uniform seeded assignment, ignoring embeddings.
pub fn route_random(queries: &[Demo], c: usize, seed: u64) -> Vec<Vec<Demo>> {
    let c = c.max(1);
    let mut rng = seed::rng(seed, "route-random", 0);
    let mut buckets = vec![Vec::new(); c];
    for q in queries {
        buckets[rng.random_range(0..c)].push(q.clone());
    }
    buckets
}
