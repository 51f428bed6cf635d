//! Demo assignment by clustering in embedding space.
//!
//! Submodules:
//! - [`kmeans`]: Lloyd's iteration from k-means++ seeding, plus the
//!   size-capped variant that discards excess members.
//! - [`select`]: scaled-inertia choice of the number of clusters.
//! - [`kernel`]: the between-cluster kernel objective and the
//!   kernel-regression predictors used to reason about restricting each
//!   expert to its own demos.

pub mod kernel;
pub mod kmeans;
pub mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{
    kernel_inertia, kernel_objective, kernel_regression_predict, restriction_error, KernelSpec,
};
pub use kmeans::{apply_cap, kmeans, kmeans_balanced, kmeans_with, Distance, KMeansOptions};
pub use select::{scaled_inertia_select, InertiaScaling, ScaledInertiaPoint, Selection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot form {requested} clusters from {distinct} distinct vectors")]
    DegenerateInput { requested: usize, distinct: usize },
    #[error("cluster count {requested} is invalid for {points} points")]
    InvalidClusterCount { requested: usize, points: usize },
    #[error("invalid cluster range {min}..={max} for {points} points")]
    InvalidRange { min: usize, max: usize, points: usize },
    #[error("cluster size cap must be positive")]
    InvalidCap,
    #[error("labels do not describe the given vectors: {0}")]
    InvalidLabels(String),
    #[error("RBF bandwidth must be finite and positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("kernel mass is zero or non-finite at query {index:?}")]
    ZeroKernelMass { index: Option<usize> },
}

/// Result of a clustering run.
///
/// `labels` covers every input vector. Members of cluster `c` are the
/// points labelled `c` that are not in `discarded`; `centroids` and
/// `inertia` are computed over members only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    #[serde(rename = "C")]
    pub c: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub discarded: Vec<usize>,
    /// Objective after each Lloyd iteration of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl ClusterAssignment {
    /// Indices of the retained members of each cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.c];
        for (i, &label) in self.labels.iter().enumerate() {
            if self.discarded.binary_search(&i).is_err() {
                out[label].push(i);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }

    /// Serializable form with discarded points named by id.
    pub fn to_record(&self, ids: &[String]) -> ClusterRecord {
        ClusterRecord {
            c: self.c,
            labels: self.labels.clone(),
            centroids: self.centroids.clone(),
            inertia: self.inertia,
            discarded_ids: self.discarded.iter().map(|&i| ids[i].clone()).collect(),
        }
    }
}

/// JSON shape of a cluster assignment in build outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    #[serde(rename = "C")]
    pub c: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub discarded_ids: Vec<String>,
}

pub(crate) fn check_dimensions<V: AsRef<[f64]>>(vectors: &[V]) -> Result<usize, ClusterError> {
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    for (index, v) in vectors.iter().enumerate() {
        let found = v.as_ref().len();
        if found != dim {
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: dim,
                found,
            });
        }
    }
    Ok(dim)
}

pub(crate) fn distinct_count<V: AsRef<[f64]>>(vectors: &[V]) -> usize {
    let mut keys: Vec<Vec<u64>> = vectors
        .iter()
        .map(|v| v.as_ref().iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mean_of<V: AsRef<[f64]>>(vectors: &[V], members: &[usize], dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for &i in members {
        for (s, x) in sum.iter_mut().zip(vectors[i].as_ref()) {
            *s += x;
        }
    }
    let n = members.len().max(1) as f64;
    sum.iter().map(|s| s / n).collect()
}

/// Within-cluster sum of squared distances to cluster means, computed
/// directly from labels. Labels must lie in `0..c` for some `c`.
pub fn inertia<V: AsRef<[f64]>>(vectors: &[V], labels: &[usize]) -> Result<f64, ClusterError> {
    let dim = check_dimensions(vectors)?;
    let groups = groups_from_labels(vectors.len(), labels)?;
    Ok(groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|members| {
            let centre = mean_of(vectors, members, dim);
            members
                .iter()
                .map(|&i| squared_distance(vectors[i].as_ref(), &centre))
                .sum::<f64>()
        })
        .sum())
}

pub(crate) fn groups_from_labels(n: usize, labels: &[usize]) -> Result<Vec<Vec<usize>>, ClusterError> {
    if labels.len() != n {
        return Err(ClusterError::InvalidLabels(format!(
            "{} labels for {n} vectors",
            labels.len()
        )));
    }
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    Ok(groups)
}
