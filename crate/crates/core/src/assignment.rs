//! Instruction assignment: candidate generation from demos, validation
//! scoring, and region-based joint search over the experts.

use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::TemplateSet;
use crate::providers::{CompletionRequest, Provider, ProviderError};
use crate::scoring::Scorer;
use crate::seed;
use crate::task::{Demo, Metric};

/// Demos per generation prompt when not configured.
pub const DEFAULT_GENERATION_DEMOS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("every generated instruction was blank (expert {expert:?})")]
    EmptyGeneration { expert: Option<usize> },
    #[error("cannot score on an empty evaluation set")]
    EmptyEvalSet,
    #[error("invalid search input: {0}")]
    InvalidInput(String),
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),
    #[error("artifact io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionCandidate {
    pub text: String,
    /// Ids of the demos shown in the generation prompt.
    pub source_demos: Vec<String>,
    pub generation_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: InstructionCandidate,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub index: usize,
    pub centroid: Vec<f64>,
    pub demos: Vec<Demo>,
    pub instruction: String,
    pub local_val_score: f64,
    pub candidates_evaluated: Vec<ScoredCandidate>,
    /// Set when no validation item was routed here and the full
    /// validation split was used instead.
    #[serde(default)]
    pub validation_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    #[default]
    Rbjs,
    /// One instruction chosen on the full validation split without demos,
    /// shared by every expert.
    IndependentSearch,
    /// Like RBJS but each expert is scored on a random validation subset
    /// of its routed size.
    JointSearch,
    /// Like RBJS but candidates are generated from the expert's own demos.
    RbjsSameCluster,
}

/// Everything needed to issue and score prompts.
#[derive(Debug, Clone, Copy)]
pub struct SearchContext<'a> {
    pub provider: &'a Provider,
    pub templates: &'a TemplateSet,
    pub scorer: &'a Scorer,
    pub metric: Metric,
}

/// The regions produced by demo assignment and routing.
#[derive(Debug, Clone, Copy)]
pub struct Regions<'a> {
    pub clusters: &'a [Vec<Demo>],
    pub centroids: &'a [Vec<f64>],
    pub routed_val: &'a [Vec<Demo>],
    pub full_val: &'a [Demo],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub total_budget: usize,
    pub generation_demos: usize,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            total_budget: 20,
            generation_demos: DEFAULT_GENERATION_DEMOS,
            seed: 0,
        }
    }
}

/// Samples `r` demos from `pool`, renders one generation prompt and samples
/// `m` completions from it. Blank results are dropped and duplicates keep
/// their first occurrence. `stream` separates the sampling of different
/// callers sharing a seed.
pub fn generate_candidates(
    ctx: &SearchContext<'_>,
    pool: &[Demo],
    r: usize,
    m: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<InstructionCandidate>, AssignError> {
    if m == 0 {
        return Err(AssignError::InvalidInput("m must be at least 1".into()));
    }
    if r == 0 || r > pool.len() {
        return Err(AssignError::InvalidInput(format!(
            "cannot sample {r} demos from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = seed::rng(seed, "generation-demos", stream);
    let shown: Vec<Demo> = sample(&mut rng, pool.len(), r)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let prompt = ctx.templates.generation_prompt(&shown);
    let source_demos: Vec<String> = shown.iter().map(|d| d.id.clone()).collect();
    let request = CompletionRequest::generation(prompt);

    let mut out: Vec<InstructionCandidate> = Vec::new();
    for generation_index in 0..m {
        let text = ctx.provider.complete(&request)?.trim().to_string();
        if text.is_empty() || out.iter().any(|c| c.text == text) {
            continue;
        }
        out.push(InstructionCandidate {
            text,
            source_demos: source_demos.clone(),
            generation_index,
        });
    }
    if out.is_empty() {
        return Err(AssignError::EmptyGeneration { expert: None });
    }
    Ok(out)
}

/// Prediction and score for each item of `eval_set`, prompting with
/// `[instruction, demos, input]` at temperature 0.
pub fn predict_and_score(
    ctx: &SearchContext<'_>,
    instruction: &str,
    demos: &[Demo],
    eval_set: &[Demo],
) -> Result<Vec<(String, f64)>, AssignError> {
    eval_set
        .par_iter()
        .map(|item| {
            let prompt = ctx.templates.assemble(instruction, demos, &item.input);
            let prediction = ctx.provider.complete(&CompletionRequest::evaluation(prompt))?;
            let score = ctx.scorer.score(ctx.metric, &prediction, item);
            Ok((prediction, score))
        })
        .collect()
}

/// Mean score of `instruction` with `demos` over `eval_set`.
pub fn score_instruction(
    ctx: &SearchContext<'_>,
    instruction: &str,
    demos: &[Demo],
    eval_set: &[Demo],
) -> Result<f64, AssignError> {
    if eval_set.is_empty() {
        return Err(AssignError::EmptyEvalSet);
    }
    let scored = predict_and_score(ctx, instruction, demos, eval_set)?;
    Ok(scored.iter().map(|(_, s)| s).sum::<f64>() / scored.len() as f64)
}

/// Candidate generation calls for expert `c` of `n` under `budget`: an
/// equal share, with the remainder going to the lowest indices.
pub fn per_expert_budget(budget: usize, n: usize, c: usize) -> usize {
    budget / n + usize::from(c < budget % n)
}

pub fn rbjs(
    ctx: &SearchContext<'_>,
    regions: Regions<'_>,
    params: SearchParams,
) -> Result<Vec<Expert>, AssignError> {
    assign_variant(SearchKind::Rbjs, ctx, regions, params)
}

pub fn assign_variant(
    kind: SearchKind,
    ctx: &SearchContext<'_>,
    regions: Regions<'_>,
    params: SearchParams,
) -> Result<Vec<Expert>, AssignError> {
    let n = regions.clusters.len();
    check_regions(&regions, params)?;
    if kind == SearchKind::IndependentSearch {
        return independent_search(ctx, regions, params);
    }

    // All sampling and generation happens first, serially and in expert
    // order, so parallel scoring below cannot change the outcome.
    let mut plans = Vec::with_capacity(n);
    for c in 0..n {
        let pool: Vec<Demo> = match kind {
            SearchKind::RbjsSameCluster => regions.clusters[c].clone(),
            _ if n == 1 => regions.clusters[0].clone(),
            _ => regions
                .clusters
                .iter()
                .enumerate()
                .filter(|&(other, _)| other != c)
                .flat_map(|(_, demos)| demos.iter().cloned())
                .collect(),
        };
        let m = per_expert_budget(params.total_budget, n, c);
        let r = params.generation_demos.min(pool.len());
        let candidates = generate_candidates(ctx, &pool, r, m, params.seed, c as u64).map_err(|e| match e {
            AssignError::EmptyGeneration { .. } => AssignError::EmptyGeneration { expert: Some(c) },
            other => other,
        })?;
        let routed = &regions.routed_val[c];
        let fallback = routed.is_empty();
        let eval_set: Vec<Demo> = if fallback {
            regions.full_val.to_vec()
        } else if kind == SearchKind::JointSearch {
            let mut rng = seed::rng(params.seed, "joint-search-validation", c as u64);
            sample(&mut rng, regions.full_val.len(), routed.len())
                .into_iter()
                .map(|i| regions.full_val[i].clone())
                .collect()
        } else {
            routed.clone()
        };
        plans.push((candidates, eval_set, fallback));
    }

    plans
        .into_par_iter()
        .enumerate()
        .map(|(c, (candidates, eval_set, fallback))| {
            let demos = &regions.clusters[c];
            let scored = score_all(ctx, candidates, demos, &eval_set)?;
            Ok(expert_from(c, regions.centroids[c].clone(), demos.clone(), scored, fallback))
        })
        .collect()
}

fn independent_search(
    ctx: &SearchContext<'_>,
    regions: Regions<'_>,
    params: SearchParams,
) -> Result<Vec<Expert>, AssignError> {
    let pool: Vec<Demo> = regions.clusters.iter().flatten().cloned().collect();
    let r = params.generation_demos.min(pool.len());
    let candidates = generate_candidates(ctx, &pool, r, params.total_budget, params.seed, 0)?;
    let scored = score_all(ctx, candidates, &[], regions.full_val)?;
    Ok(regions
        .clusters
        .iter()
        .enumerate()
        .map(|(c, demos)| expert_from(c, regions.centroids[c].clone(), demos.clone(), scored.clone(), false))
        .collect())
}

fn score_all(
    ctx: &SearchContext<'_>,
    candidates: Vec<InstructionCandidate>,
    demos: &[Demo],
    eval_set: &[Demo],
) -> Result<Vec<ScoredCandidate>, AssignError> {
    candidates
        .into_par_iter()
        .map(|candidate| {
            let score = score_instruction(ctx, &candidate.text, demos, eval_set)?;
            Ok(ScoredCandidate { candidate, score })
        })
        .collect()
}

/// Picks the best-scoring candidate, breaking ties toward the lowest
/// generation index.
pub fn best_candidate(scored: &[ScoredCandidate]) -> Option<&ScoredCandidate> {
    scored.iter().reduce(|best, s| {
        let better = s.score > best.score
            || (s.score == best.score && s.candidate.generation_index < best.candidate.generation_index);
        if better {
            s
        } else {
            best
        }
    })
}

fn expert_from(
    index: usize,
    centroid: Vec<f64>,
    demos: Vec<Demo>,
    scored: Vec<ScoredCandidate>,
    validation_fallback: bool,
) -> Expert {
    let best = best_candidate(&scored).expect("generation returned at least one candidate");
    Expert {
        index,
        centroid,
        demos,
        instruction: best.candidate.text.clone(),
        local_val_score: best.score,
        candidates_evaluated: scored.clone(),
        validation_fallback,
    }
}

fn check_regions(regions: &Regions<'_>, params: SearchParams) -> Result<(), AssignError> {
    let n = regions.clusters.len();
    if n == 0 {
        return Err(AssignError::InvalidInput("no clusters".into()));
    }
    if regions.routed_val.len() != n || regions.centroids.len() != n {
        return Err(AssignError::InvalidInput(format!(
            "{n} clusters, {} routed validation lists, {} centroids",
            regions.routed_val.len(),
            regions.centroids.len()
        )));
    }
    if params.total_budget < n {
        return Err(AssignError::InvalidInput(format!(
            "budget {} is smaller than the {n} experts",
            params.total_budget
        )));
    }
    if params.generation_demos == 0 {
        return Err(AssignError::InvalidInput("generation needs at least one demo".into()));
    }
    if let Some(c) = regions.clusters.iter().position(Vec::is_empty) {
        return Err(AssignError::InvalidInput(format!("cluster {c} has no demos")));
    }
    if regions.full_val.is_empty() {
        return Err(AssignError::EmptyEvalSet);
    }
    Ok(())
}

/// The deployable result of a build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureArtifact {
    pub task_name: String,
    pub embedding_model_id: String,
    pub seed: u64,
    pub build_config_digest: String,
    pub search: SearchKind,
    pub experts: Vec<Expert>,
}

impl MixtureArtifact {
    pub fn validate(&self) -> Result<(), AssignError> {
        let bad = |m: String| Err(AssignError::InvalidArtifact(m));
        if self.experts.is_empty() {
            return bad("no experts".into());
        }
        for (i, e) in self.experts.iter().enumerate() {
            if e.index != i {
                return bad(format!("expert at position {i} has index {}", e.index));
            }
            if e.demos.is_empty() {
                return bad(format!("expert {i} has no demos"));
            }
            let Some(best) = e.candidates_evaluated.iter().map(|s| s.score).reduce(f64::max) else {
                return bad(format!("expert {i} has no evaluated candidates"));
            };
            let chosen = e
                .candidates_evaluated
                .iter()
                .find(|s| s.candidate.text == e.instruction);
            match chosen {
                Some(s) if s.score == best && s.score == e.local_val_score => {}
                _ => return bad(format!("expert {i}'s instruction is not a best-scoring candidate")),
            }
            for later in &self.experts[i + 1..] {
                if later.centroid == e.centroid {
                    return bad(format!("experts {i} and {} share a centroid", later.index));
                }
            }
        }
        Ok(())
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        self.experts.iter().map(|e| e.centroid.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the serialized artifact.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AssignError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| AssignError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AssignError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| AssignError::Io(format!("{}: {e}", path.display())))?;
        let artifact: Self = serde_json::from_str(&text).map_err(|e| AssignError::Io(e.to_string()))?;
        artifact.validate()?;
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, INSTRUCTION_A, INSTRUCTION_B};
    use crate::providers::mock::{GenerationOrder, PoolEntry};
    use crate::providers::{ProviderBudget, ScriptedWorld, TextTransform};

    fn region(task: &crate::task::TaskDataset, prefix: char) -> Vec<Demo> {
        task.train.iter().filter(|d| d.id.starts_with(prefix)).cloned().collect()
    }

    struct Setup {
        provider: Provider,
        templates: TemplateSet,
        scorer: Scorer,
    }

    impl Setup {
        fn new(world: ScriptedWorld) -> Self {
            Self {
                provider: Provider::scripted(world),
                templates: TemplateSet::default(),
                scorer: Scorer::default(),
            }
        }
        fn ctx(&self) -> SearchContext<'_> {
            SearchContext {
                provider: &self.provider,
                templates: &self.templates,
                scorer: &self.scorer,
                metric: Metric::ExactMatch,
            }
        }
    }

    fn two_regions() -> (Vec<Vec<Demo>>, Vec<Vec<Demo>>, Vec<Demo>) {
        let task = fixtures::two_region_task();
        let clusters = vec![region(&task, 'u')[..3].to_vec(), region(&task, 'r')[..3].to_vec()];
        let val = task.validation.clone();
        let routed = vec![
            val.iter().filter(|d| d.id.starts_with('u')).cloned().collect(),
            val.iter().filter(|d| d.id.starts_with('r')).cloned().collect(),
        ];
        (clusters, routed, val)
    }

    const CENTROIDS: [[f64; 2]; 2] = [[0.0, 0.0], [10.0, 10.0]];

    fn centroids(n: usize) -> Vec<Vec<f64>> {
        CENTROIDS[..n].iter().map(|c| c.to_vec()).collect()
    }

    #[test]
    fn duplicates_are_dropped_in_first_occurrence_order() {
        let mut world = fixtures::scripted_world();
        world.generation_order = GenerationOrder::Sequence { indices: vec![0, 0, 1] };
        let s = Setup::new(world);
        let pool = region(&fixtures::two_region_task(), 'u');
        let got = generate_candidates(&s.ctx(), &pool, 2, 3, 1, 0).unwrap();
        let texts: Vec<(&str, usize)> = got.iter().map(|c| (c.text.as_str(), c.generation_index)).collect();
        assert_eq!(texts, [(INSTRUCTION_A, 0), (INSTRUCTION_B, 2)]);
        assert_eq!(s.provider.budget().used_generations(), 3);
    }

    #[test]
    fn full_pool_appears_once_in_the_prompt() {
        let s = Setup::new(fixtures::scripted_world());
        let pool = region(&fixtures::two_region_task(), 'r')[..4].to_vec();
        let got = generate_candidates(&s.ctx(), &pool, 4, 1, 3, 0).unwrap();
        let mut ids = got[0].source_demos.clone();
        ids.sort();
        let mut want: Vec<String> = pool.iter().map(|d| d.id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
        let prompt = s.templates.generation_prompt(&pool);
        for d in &pool {
            assert_eq!(prompt.matches(&format!("Input: {}\n", d.input)).count(), 1);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let pool = region(&fixtures::two_region_task(), 'u');
        let run = |seed| {
            let s = Setup::new(fixtures::scripted_world());
            generate_candidates(&s.ctx(), &pool, 3, 2, seed, 0).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5)[0].source_demos, run(6)[0].source_demos);
    }

    #[test]
    fn blank_generations_are_an_error() {
        let mut world = fixtures::scripted_world();
        world.instruction_pool = vec![PoolEntry {
            instruction: "   ".into(),
            rule: TextTransform::Identity,
        }];
        let s = Setup::new(world);
        let pool = region(&fixtures::two_region_task(), 'u');
        assert_eq!(
            generate_candidates(&s.ctx(), &pool, 1, 2, 0, 0),
            Err(AssignError::EmptyGeneration { expert: None })
        );
    }

    #[test]
    fn scoring_by_region() {
        let s = Setup::new(fixtures::scripted_world());
        let (clusters, routed, _) = two_regions();
        let ctx = s.ctx();
        assert_eq!(score_instruction(&ctx, INSTRUCTION_A, &clusters[0], &routed[0]).unwrap(), 1.0);
        assert_eq!(score_instruction(&ctx, INSTRUCTION_A, &clusters[0], &routed[1]).unwrap(), 0.0);
        // No instruction: the demos decide the rule.
        assert_eq!(score_instruction(&ctx, "", &clusters[1], &routed[1]).unwrap(), 1.0);
        assert_eq!(score_instruction(&ctx, "", &clusters[1], &routed[0]).unwrap(), 0.0);
        let one = score_instruction(&ctx, INSTRUCTION_B, &[], &routed[0][..1]).unwrap();
        assert!(one == 0.0 || one == 1.0);
        assert_eq!(score_instruction(&ctx, "x", &[], &[]), Err(AssignError::EmptyEvalSet));
    }

    /// Scores every (candidate, region) pair directly from the rules and
    /// gold answers, without going through prompts.
    fn hand_scores(val: &[Vec<Demo>]) -> [[f64; 2]; 2] {
        let rules = [TextTransform::Upper, TextTransform::ReverseWords];
        let mut out = [[0.0; 2]; 2];
        for (i, rule) in rules.iter().enumerate() {
            for (r, items) in val.iter().enumerate() {
                let hits = items
                    .iter()
                    .filter(|d| crate::scoring::exact_match(&rule.apply(&d.input), &d.outputs) == 1.0)
                    .count();
                out[i][r] = hits as f64 / items.len() as f64;
            }
        }
        out
    }

    #[test]
    fn rbjs_picks_the_region_correct_instruction() {
        let s = Setup::new(fixtures::scripted_world());
        let (clusters, routed, val) = two_regions();
        let oracle = hand_scores(&routed);
        assert_eq!(oracle, [[1.0, 0.0], [0.0, 1.0]]);
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        let experts = rbjs(&s.ctx(), regions, SearchParams::default()).unwrap();
        assert_eq!(experts[0].instruction, INSTRUCTION_A);
        assert_eq!(experts[1].instruction, INSTRUCTION_B);
        for e in &experts {
            assert_eq!(e.local_val_score, 1.0);
            for sc in &e.candidates_evaluated {
                let i = usize::from(sc.candidate.text == INSTRUCTION_B);
                assert_eq!(sc.score, oracle[i][e.index]);
                // Generated from the other cluster's demos.
                let other = &clusters[1 - e.index];
                assert!(sc.candidate.source_demos.iter().all(|id| other.iter().any(|d| &d.id == id)));
            }
        }
        assert_eq!(s.provider.budget().used_generations(), 20);
    }

    #[test]
    fn independent_search_shares_one_instruction() {
        let s = Setup::new(fixtures::scripted_world());
        let (clusters, routed, val) = two_regions();
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        let experts = assign_variant(SearchKind::IndependentSearch, &s.ctx(), regions, SearchParams::default()).unwrap();
        assert_eq!(experts[0].instruction, experts[1].instruction);
        assert_eq!(s.provider.budget().used_generations(), 20);
        let rbjs_experts = rbjs(&Setup::new(fixtures::scripted_world()).ctx(), regions, SearchParams::default()).unwrap();
        assert_ne!(rbjs_experts[0].instruction, rbjs_experts[1].instruction);
        // RBJS is at least as good as the shared instruction on every region.
        let ctx = s.ctx();
        for (c, e) in rbjs_experts.iter().enumerate() {
            let shared = score_instruction(&ctx, &experts[0].instruction, &clusters[c], &routed[c]).unwrap();
            assert!(e.local_val_score >= shared);
        }
    }

    #[test]
    fn joint_search_uses_routed_sizes() {
        let mut s = Setup::new(fixtures::scripted_world());
        s.provider = s.provider.clone().without_completion_cache();
        let (clusters, mut routed, val) = two_regions();
        routed[0].truncate(1);
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        let experts = assign_variant(SearchKind::JointSearch, &s.ctx(), regions, SearchParams::default()).unwrap();
        let evaluations: usize = experts
            .iter()
            .map(|e| e.candidates_evaluated.len() * routed[e.index].len())
            .sum();
        let used = s.provider.budget().used_completions() as usize;
        assert_eq!(used - 20, evaluations);
        assert_eq!(evaluations, 2 * 1 + 2 * 4);
    }

    #[test]
    fn same_cluster_variant_generates_from_own_demos() {
        let s = Setup::new(fixtures::scripted_world());
        let (clusters, routed, val) = two_regions();
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        let experts = assign_variant(SearchKind::RbjsSameCluster, &s.ctx(), regions, SearchParams::default()).unwrap();
        for e in &experts {
            for sc in &e.candidates_evaluated {
                assert!(sc.candidate.source_demos.iter().all(|id| clusters[e.index].iter().any(|d| &d.id == id)));
            }
        }
    }

    #[test]
    fn single_expert_uses_its_own_pool_and_the_whole_budget() {
        let (clusters, _, val) = two_regions();
        let all: Vec<Demo> = clusters.concat();
        let clusters = vec![all];
        let routed = vec![val.clone()];
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(1),
            routed_val: &routed,
            full_val: &val,
        };
        let mut chosen = Vec::new();
        for kind in [SearchKind::Rbjs, SearchKind::IndependentSearch, SearchKind::JointSearch, SearchKind::RbjsSameCluster] {
            let s = Setup::new(fixtures::scripted_world());
            let experts = assign_variant(kind, &s.ctx(), regions, SearchParams::default()).unwrap();
            assert_eq!(experts.len(), 1);
            assert_eq!(s.provider.budget().used_generations(), 20);
            chosen.push(experts[0].instruction.clone());
        }
        // Rbjs and RbjsSameCluster see the same pool and sample identically.
        assert_eq!(chosen[0], chosen[3]);
    }

    #[test]
    fn empty_routed_subset_falls_back_to_the_full_split() {
        let s = Setup::new(fixtures::scripted_world());
        let (clusters, mut routed, val) = two_regions();
        routed[1].clear();
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        let experts = rbjs(&s.ctx(), regions, SearchParams::default()).unwrap();
        assert!(!experts[0].validation_fallback);
        assert!(experts[1].validation_fallback);
        assert_eq!(experts[1].local_val_score, 0.5);
    }

    #[test]
    fn budget_split() {
        assert_eq!((0..4).map(|c| per_expert_budget(20, 4, c)).collect::<Vec<_>>(), [5, 5, 5, 5]);
        assert_eq!((0..3).map(|c| per_expert_budget(20, 3, c)).collect::<Vec<_>>(), [7, 7, 6]);
        for n in 1..=20 {
            assert_eq!((0..n).map(|c| per_expert_budget(20, n, c)).sum::<usize>(), 20);
        }
    }

    #[test]
    fn four_experts_get_five_candidates_each() {
        let mut world = fixtures::scripted_world();
        world.instruction_pool = (0..20)
            .map(|i| PoolEntry {
                instruction: format!("candidate {i}"),
                rule: TextTransform::Identity,
            })
            .collect();
        let s = Setup::new(world);
        let (clusters2, routed2, val) = two_regions();
        let clusters: Vec<Vec<Demo>> = clusters2.iter().flat_map(|c| [c[..2].to_vec(), c[2..].to_vec()]).collect();
        let routed = vec![routed2[0].clone(), vec![], routed2[1].clone(), vec![]];
        let cs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let regions = Regions {
            clusters: &clusters,
            centroids: &cs,
            routed_val: &routed,
            full_val: &val,
        };
        let experts = rbjs(&s.ctx(), regions, SearchParams::default()).unwrap();
        for e in &experts {
            assert_eq!(e.candidates_evaluated.len(), 5);
        }
        assert_eq!(s.provider.budget().used_generations(), 20);
    }

    #[test]
    fn budget_exhaustion_surfaces() {
        let s = Setup::new(fixtures::scripted_world());
        let provider = s.provider.clone().with_budget(ProviderBudget::with_generation_limit(5));
        let ctx = SearchContext {
            provider: &provider,
            ..s.ctx()
        };
        let (clusters, routed, val) = two_regions();
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        assert!(matches!(
            rbjs(&ctx, regions, SearchParams::default()),
            Err(AssignError::Provider(ProviderError::BudgetExhausted { .. }))
        ));
    }

    #[test]
    fn ties_go_to_the_earliest_candidate() {
        let mk = |i, score| ScoredCandidate {
            candidate: InstructionCandidate {
                text: format!("c{i}"),
                source_demos: vec![],
                generation_index: i,
            },
            score,
        };
        let scored = vec![mk(3, 0.5), mk(1, 0.5), mk(2, 0.4)];
        assert_eq!(best_candidate(&scored).unwrap().candidate.generation_index, 1);
    }

    #[test]
    fn artifact_validation_and_round_trip() {
        let s = Setup::new(fixtures::scripted_world());
        let (clusters, routed, val) = two_regions();
        let regions = Regions {
            clusters: &clusters,
            centroids: &centroids(2),
            routed_val: &routed,
            full_val: &val,
        };
        let artifact = MixtureArtifact {
            task_name: "two_region".into(),
            embedding_model_id: "scripted-embedding".into(),
            seed: 0,
            build_config_digest: "x".into(),
            search: SearchKind::Rbjs,
            experts: rbjs(&s.ctx(), regions, SearchParams::default()).unwrap(),
        };
        artifact.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        artifact.save(&path).unwrap();
        let back = MixtureArtifact::load(&path).unwrap();
        assert_eq!(back.digest(), artifact.digest());

        let mut broken = artifact.clone();
        broken.experts[0].instruction = INSTRUCTION_B.into();
        assert!(broken.validate().is_err());
        let mut broken = artifact;
        broken.experts[1].centroid = broken.experts[0].centroid.clone();
        assert!(broken.validate().is_err());
    }
}
