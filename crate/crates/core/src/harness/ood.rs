use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{Engine, HarnessError};
use crate::clustering::kmeans;
use crate::seed;
use crate::task::{Demo, TaskDataset};

/// Share of the training cluster carved off as validation.
pub const OOD_VALIDATION_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSplit {
    pub task: TaskDataset,
    /// Sizes of the two clusters, by cluster index.
    pub cluster_sizes: [usize; 2],
    /// The cluster that became train and validation; the other is test.
    pub train_cluster: usize,
}

/// Pools every demo of `task`, splits the pool into two clusters by
/// 2-means on input embeddings, and makes the larger cluster (the first on
/// a tie) the training side, with a seeded 20% of it held out as
/// validation. The smaller cluster becomes the test split. Demos keep
/// their original relative order within each split.
pub fn make_ood_split(engine: &Engine, task: &TaskDataset, seed: u64) -> Result<OodSplit, HarnessError> {
    let pool: Vec<Demo> = task
        .train
        .iter()
        .chain(&task.validation)
        .chain(&task.test)
        .cloned()
        .collect();
    if pool.len() < 4 {
        return Err(HarnessError::DegenerateTask(format!(
            "{} demos are too few for an out-of-distribution split",
            pool.len()
        )));
    }
    let inputs: Vec<String> = pool.iter().map(|d| d.input.clone()).collect();
    let vectors = engine.provider.embed_values(&inputs)?;
    let a = kmeans(&vectors, 2, seed).map_err(|e| HarnessError::DegenerateTask(e.to_string()))?;
    let sizes = a.sizes();
    let cluster_sizes = [sizes[0], sizes[1]];
    let train_cluster = usize::from(sizes[1] > sizes[0]);
    tracing::info!(
        task = %task.name,
        larger = sizes[train_cluster],
        smaller = sizes[1 - train_cluster],
        "out-of-distribution split"
    );

    let (side, test): (Vec<(usize, &Demo)>, Vec<(usize, &Demo)>) =
        pool.iter().enumerate().partition(|&(i, _)| a.labels[i] == train_cluster);
    if side.len() < 2 {
        return Err(HarnessError::DegenerateTask(
            "training cluster is too small to hold out validation".into(),
        ));
    }
    let n_val = ((side.len() as f64 * OOD_VALIDATION_SHARE).round() as usize).clamp(1, side.len() - 1);
    let mut held = vec![false; side.len()];
    for j in sample(&mut seed::rng(seed, "ood-validation", 0), side.len(), n_val) {
        held[j] = true;
    }
    let mut out = TaskDataset {
        name: format!("{}_ood", task.name),
        metric: task.metric,
        train: Vec::new(),
        validation: Vec::new(),
        test: test.into_iter().map(|(_, d)| d.clone()).collect(),
    };
    for (j, (_, d)) in side.into_iter().enumerate() {
        if held[j] {
            out.validation.push(d.clone());
        } else {
            out.train.push(d.clone());
        }
    }
    out.validate()?;
    Ok(OodSplit {
        task: out,
        cluster_sizes,
        train_cluster,
    })
}
