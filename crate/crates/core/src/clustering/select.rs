//! Choosing the number of clusters by scaled inertia.
//!
//! For each candidate `C` the score is `inertia(C) / inertia(C_min) + alpha * C`
//! (the default, [`InertiaScaling::Normalized`]) or `inertia(C) + alpha * C`
//! ([`InertiaScaling::Raw`]). The smallest-scoring `C` wins; ties go to the
//! smaller `C`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_with, KMeansOptions};
use super::{check_dimensions, distinct_count, ClusterAssignment, ClusterError};

/// Default penalty per cluster.
pub const DEFAULT_ALPHA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InertiaScaling {
    /// Inertia divided by its value at `C_min`, so `alpha` is scale-free.
    #[default]
    Normalized,
    /// Raw inertia plus `alpha * C`.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledInertiaPoint {
    #[serde(rename = "C")]
    pub c: usize,
    pub inertia: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub c_star: usize,
    /// One entry per feasible `C`, ascending. Values of `C` above the number
    /// of distinct vectors are skipped: they cannot be clustered and any
    /// smaller feasible `C` already reaches zero inertia.
    pub per_c: Vec<ScaledInertiaPoint>,
    pub assignment: ClusterAssignment,
}

pub fn scaled_inertia_select<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    c_min: usize,
    c_max: usize,
    alpha: f64,
    seed: u64,
    scaling: InertiaScaling,
    opts: &KMeansOptions,
) -> Result<Selection, ClusterError> {
    check_dimensions(vectors)?;
    if c_min == 0 || c_min > c_max || c_max > vectors.len() {
        return Err(ClusterError::InvalidRange {
            min: c_min,
            max: c_max,
            points: vectors.len(),
        });
    }
    let distinct = distinct_count(vectors);
    if c_min > distinct {
        return Err(ClusterError::DegenerateInput {
            requested: c_min,
            distinct,
        });
    }
    let upper = c_max.min(distinct);
    let mut runs: Vec<ClusterAssignment> = (c_min..=upper)
        .into_par_iter()
        .map(|c| kmeans_with(vectors, c, seed, opts))
        .collect::<Result<_, _>>()?;

    let base = runs[0].inertia;
    let per_c: Vec<ScaledInertiaPoint> = runs
        .iter()
        .map(|run| {
            let scaled = match scaling {
                InertiaScaling::Normalized if base > 0.0 => run.inertia / base,
                InertiaScaling::Normalized => 0.0,
                InertiaScaling::Raw => run.inertia,
            };
            ScaledInertiaPoint {
                c: run.c,
                inertia: run.inertia,
                score: scaled + alpha * run.c as f64,
            }
        })
        .collect();

    let mut best = 0;
    for (i, point) in per_c.iter().enumerate() {
        if point.score < per_c[best].score {
            best = i;
        }
    }
    Ok(Selection {
        c_star: per_c[best].c,
        per_c,
        assignment: runs.swap_remove(best),
    })
}
