use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{digest_of, Settings};
use super::{Engine, HarnessError};
use crate::assignment::{assign_variant, MixtureArtifact, Regions, SearchKind, SearchParams};
use crate::clustering::{
    apply_cap, scaled_inertia_select, ClusterRecord, Distance, KMeansOptions, ScaledInertiaPoint,
};
use crate::routing::{route_split, RoutedSplit};
use crate::task::{Demo, TaskDataset};

/// A built mixture and the records of how it was built.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub artifact: MixtureArtifact,
    pub c_star: usize,
    pub per_c: Vec<ScaledInertiaPoint>,
    pub clusters: ClusterRecord,
    pub routed_validation: RoutedSplit,
}

#[derive(Serialize)]
struct SelectionLog<'a> {
    #[serde(rename = "C_star")]
    c_star: usize,
    per_c: &'a [ScaledInertiaPoint],
}

impl BuildOutput {
    /// Writes `artifact.json`, `selection.json`, `clusters.json` and
    /// `routing.jsonl` into `dir`.
    pub fn write_logs(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, HarnessError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let write = |name: &str, text: String| -> Result<PathBuf, HarnessError> {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
            Ok(path)
        };
        let mut out = vec![
            write("artifact.json", self.artifact.to_json())?,
            write(
                "selection.json",
                pretty_json(&SelectionLog {
                    c_star: self.c_star,
                    per_c: &self.per_c,
                }),
            )?,
            write("clusters.json", pretty_json(&self.clusters))?,
        ];
        let log = dir.join("routing.jsonl");
        self.routed_validation
            .write_audit_log(&log)
            .map_err(|e| HarnessError::io(&log, e))?;
        out.push(log);
        Ok(out)
    }
}

pub(crate) fn pretty_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Texts embedded to place each training demo.
pub(crate) fn demo_texts(demos: &[Demo], with_outputs: bool) -> Vec<String> {
    demos
        .iter()
        .map(|d| {
            if with_outputs {
                format!("{}\n{}", d.input, d.primary_output())
            } else {
                d.input.clone()
            }
        })
        .collect()
}

/// Digest of the settings that shape a build. Paths and the seed list are
/// left out so the same build from another directory or seed grid matches.
pub(crate) fn build_digest(engine: &Engine, settings: &Settings, kind: SearchKind, seed: u64) -> String {
    digest_of(&json!({
        "total_budget": settings.total_budget,
        "alpha": settings.alpha,
        "C_min": settings.c_min,
        "C_max": settings.c_max,
        "inertia_scaling": settings.inertia_scaling,
        "demo_cap_fraction": settings.demo_cap_fraction,
        "generation_demos": settings.generation_demos,
        "embed_outputs": settings.embed_outputs,
        "completion_model": engine.provider.completion_model_id(),
        "embedding_model": engine.provider.embedding_model_id(),
        "search": kind,
        "seed": seed,
    }))
}

/// Embeds the training demos, picks C by scaled inertia, caps each cluster,
/// routes the validation split to the centroids and searches one
/// instruction per expert.
pub fn build_mop(
    engine: &Engine,
    task: &TaskDataset,
    settings: &Settings,
    kind: SearchKind,
    seed: u64,
) -> Result<BuildOutput, HarnessError> {
    settings.validate()?;
    let n = task.train.len();
    if n < settings.c_min {
        return Err(HarnessError::DegenerateTask(format!(
            "{} training demos cannot form {} clusters",
            n, settings.c_min
        )));
    }
    let provider = &engine.provider;
    let vectors = provider.embed_values(&demo_texts(&task.train, settings.embed_outputs))?;
    let opts = KMeansOptions::default();
    let selection = scaled_inertia_select(
        &vectors,
        settings.c_min,
        settings.c_max.min(n),
        settings.alpha,
        seed,
        settings.inertia_scaling,
        &opts,
    )?;
    let cap = settings.demo_cap_fraction.cap(n);
    let assignment = apply_cap(&vectors, selection.assignment, cap, seed, Distance::SquaredEuclidean)?;
    let clusters: Vec<Vec<Demo>> = assignment
        .members()
        .iter()
        .map(|m| m.iter().map(|&i| task.train[i].clone()).collect())
        .collect();
    let centroids = assignment.centroids.clone();
    tracing::info!(task = %task.name, c = assignment.c, cap, sizes = ?assignment.sizes(), "clustered demos");

    let routed = route_split(&task.validation, &centroids, |texts| {
        provider.embed_values(texts).map_err(HarnessError::from)
    })?;
    if !routed.is_partition_of(&task.validation) {
        return Err(HarnessError::Internal("routed validation split is not a partition".into()));
    }

    let experts = assign_variant(
        kind,
        &engine.context(task.metric),
        Regions {
            clusters: &clusters,
            centroids: &centroids,
            routed_val: &routed.buckets,
            full_val: &task.validation,
        },
        SearchParams {
            total_budget: settings.total_budget,
            generation_demos: settings.generation_demos,
            seed,
        },
    )?;
    let artifact = MixtureArtifact {
        task_name: task.name.clone(),
        embedding_model_id: provider.embedding_model_id().to_string(),
        seed,
        build_config_digest: build_digest(engine, settings, kind, seed),
        search: kind,
        experts,
    };
    artifact.validate()?;
    let ids: Vec<String> = task.train.iter().map(|d| d.id.clone()).collect();
    Ok(BuildOutput {
        artifact,
        c_star: selection.c_star,
        per_c: selection.per_c,
        clusters: assignment.to_record(&ids),
        routed_validation: routed,
    })
}
