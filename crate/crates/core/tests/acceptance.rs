//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use mop_core::assignment::SearchKind;
use mop_core::clustering::{
    inertia, kernel_inertia, kmeans, restriction_error, scaled_inertia_select, squared_distance, InertiaScaling,
    KMeansOptions, KernelSpec,
};
use mop_core::fixtures::{scripted_world, shared_rule_task, two_region_task, INSTRUCTION_A, INSTRUCTION_B};
use mop_core::harness::bench::{bench, run_seed_with};
use mop_core::harness::{
    build_mop, evaluate, BenchConfig, Engine, Method, ProviderConfig, RoutingKind, Settings,
};
use mop_core::routing::route;
use mop_core::scoring::{lcs_len, rouge_l};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

fn points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn engine() -> Engine {
    Engine::new(Settings::default().scripted_provider(scripted_world()))
}

fn clustering_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for instance in 0..50 {
        let pts = points(&mut rng, 6, 2);
        let got = kmeans(&pts, 2, instance).map_err(|e| e.to_string())?.inertia;
        // Every bipartition with point 0 on side 0 and side 1 non-empty.
        let best = (1u32..32)
            .map(|mask| {
                let labels: Vec<usize> =
                    (0..6).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { 1 } else { 0 }).collect();
                inertia(&pts, &labels).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        check((got - best).abs() <= 1e-9, || {
            format!("instance {instance}: kmeans {got} vs enumeration {best}")
        })?;
    }
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("50 instances in {took:.2?}"))
}

fn inertia_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(2..=15);
        let dim = rng.random_range(1..=5);
        let c = rng.random_range(1..=4);
        let pts = points(&mut rng, n, dim);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let direct = inertia(&pts, &labels).map_err(|e| e.to_string())?;
        let kernel = kernel_inertia(&pts, &labels, &KernelSpec::DotProduct).map_err(|e| e.to_string())?;
        let gap = (direct - kernel).abs();
        worst = worst.max(gap);
        check(gap <= 1e-9, || format!("case {case}: {direct} vs {kernel}"))?;
    }
    Ok(format!("100 labelings, max gap {worst:.1e}"))
}

fn three_blobs(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: Vec<[f64; 2]> = Vec::new();
    while centres.len() < 3 {
        let c = [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)];
        if centres.iter().all(|o| squared_distance(o, &c).sqrt() >= 5.0) {
            centres.push(c);
        }
    }
    let noise = Normal::new(0.0, 0.05).unwrap();
    centres
        .iter()
        .flat_map(|c| (0..20).map(|_| c.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>()).collect::<Vec<_>>())
        .collect()
}

fn scaled_inertia_recovery() -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    let mut picks = Vec::new();
    for seed in 0..20 {
        let data = three_blobs(1000 + seed);
        let sel = scaled_inertia_select(&data, 1, 6, 0.02, seed, InertiaScaling::Normalized, &KMeansOptions::default())
            .map_err(|e| e.to_string())?;
        hits += usize::from(sel.c_star == 3);
        picks.push(sel.c_star);
    }
    let took = within(Duration::from_secs(10), start)?;
    check(hits >= 19, || format!("C*=3 in {hits}/20 runs: {picks:?}"))?;
    Ok(format!("C*=3 in {hits}/20 runs in {took:.2?}"))
}

fn restriction_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let c = rng.random_range(2..=4);
        let block = rng.random_range(1..=3);
        let n = rng.random_range(c..=12);
        // Cluster k lives in coordinates [k*block, (k+1)*block) with
        // positive entries, so dot products across clusters are exactly 0.
        let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
        let demos: Vec<(Vec<f64>, f64)> = labels
            .iter()
            .map(|&k| {
                let mut v = vec![0.0; c * block];
                for x in &mut v[k * block..(k + 1) * block] {
                    *x = rng.random_range(0.1..2.0);
                }
                (v, rng.random_range(-5.0..5.0))
            })
            .collect();
        for (i, (a, _)) in demos.iter().enumerate() {
            for (j, (b, _)) in demos.iter().enumerate() {
                if labels[i] != labels[j] {
                    check(KernelSpec::DotProduct.eval(a, b) == 0.0, || format!("case {case}: cross kernel not 0"))?;
                }
            }
        }
        let err = restriction_error(&demos, &labels, &KernelSpec::DotProduct).map_err(|e| e.to_string())?;
        let max = err.iter().copied().fold(0.0, f64::max);
        worst = worst.max(max);
        check(max <= 1e-12, || format!("case {case}: restriction error {max}"))?;
    }
    Ok(format!("50 instances, max error {worst:.1e}"))
}

fn rbjs_end_to_end() -> Outcome {
    let start = Instant::now();
    let task = two_region_task();
    let settings = Settings::default();
    let e = engine();
    let built = build_mop(&e, &task, &settings, SearchKind::Rbjs, 0).map_err(|e| e.to_string())?;
    let experts = &built.artifact.experts;
    check(experts.len() == 2, || format!("C = {}", experts.len()))?;
    for x in experts {
        let home = &x.demos[0].id[..1];
        let want = if home == "u" { INSTRUCTION_A } else { INSTRUCTION_B };
        check(x.demos.iter().all(|d| d.id.starts_with(home)), || format!("expert {} mixes regions", x.index))?;
        check(x.instruction == want, || format!("expert {} chose {:?}", x.index, x.instruction))?;
    }
    let ev = evaluate(&e, &built.artifact, &task.test, task.metric, RoutingKind::Centroid, 0).map_err(|e| e.to_string())?;
    check(ev.report.mean == 1.0, || format!("RBJS test mean {}", ev.report.mean))?;

    let ind_engine = engine();
    let ind = build_mop(&ind_engine, &task, &settings, SearchKind::IndependentSearch, 0).map_err(|e| e.to_string())?;
    let ind_ev = evaluate(&ind_engine, &ind.artifact, &task.test, task.metric, RoutingKind::Centroid, 0)
        .map_err(|e| e.to_string())?;
    let region_mean = |prefix: &str| {
        let s: Vec<f64> = ind_ev.predictions.iter().filter(|p| p.id.starts_with(prefix)).map(|p| p.score).collect();
        s.iter().sum::<f64>() / s.len() as f64
    };
    let (u, r) = (region_mean("u"), region_mean("r"));
    check(u.min(r) <= 0.5, || format!("independent search region means {u}, {r}"))?;
    let took = within(Duration::from_secs(2), start)?;
    Ok(format!("C=2, test mean 1.0; independent search regions {u:.2}/{r:.2}; {took:.2?}"))
}

fn budget_parity() -> Outcome {
    let mut methods = vec![Method::Mop];
    methods.extend(Method::BASELINES);
    methods.extend(
        [SearchKind::IndependentSearch, SearchKind::JointSearch, SearchKind::RbjsSameCluster].map(Method::MopVariant),
    );
    let settings = Settings::default();
    for task in [two_region_task(), shared_rule_task()] {
        for &method in &methods {
            for seed in 0..3 {
                let run = run_seed_with(&engine(), &settings, &task, method, seed).map_err(|e| e.to_string())?;
                check(run.generation_calls == 20, || {
                    format!("{method} on {} seed {seed}: {} generation calls", task.name, run.generation_calls)
                })?;
            }
        }
    }
    Ok(format!("{} methods x 2 tasks x 3 seeds, 20 generation calls each", methods.len()))
}

/// Sequences over {0, 1, 2} of length 0..=8, shortest first.
struct SeqSpace {
    seqs: Vec<Vec<u8>>,
    offsets: [usize; 10],
}

impl SeqSpace {
    fn new() -> Self {
        let mut seqs = Vec::new();
        let mut offsets = [0; 10];
        for len in 0..=8u32 {
            offsets[len as usize] = seqs.len();
            for mut v in 0..3usize.pow(len) {
                let mut s = vec![0u8; len as usize];
                for slot in s.iter_mut().rev() {
                    *slot = (v % 3) as u8;
                    v /= 3;
                }
                seqs.push(s);
            }
        }
        offsets[9] = seqs.len();
        Self { seqs, offsets }
    }

    fn index(&self, s: &[u8]) -> usize {
        self.offsets[s.len()] + s.iter().fold(0, |acc, &t| acc * 3 + t as usize)
    }

    /// Indices of every distinct subsequence of `s`.
    fn subsequences(&self, s: &[u8]) -> Vec<usize> {
        let mut out: Vec<usize> = (0u32..1 << s.len())
            .map(|mask| {
                let sub: Vec<u8> = (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
                self.index(&sub)
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Tokens relabelled in order of first appearance, so `a` starts with 0
/// and never skips a label.
fn is_first_appearance_form(a: &[u8]) -> bool {
    let mut next = 0;
    for &t in a {
        if t > next {
            return false;
        }
        if t == next {
            next += 1;
        }
    }
    true
}

fn rouge_oracle() -> Outcome {
    let exact = rouge_l("a c", "a b c");
    check(exact == 0.8, || format!("rouge_l(\"a c\", \"a b c\") = {exact:?}"))?;

    // Exhaustive oracle: contains[s] is the set of sequences having s as a
    // subsequence. LCS(a, b) >= k iff b lies in the union of contains[s]
    // over the length-k subsequences s of a.
    let space = SeqSpace::new();
    let n = space.seqs.len();
    let words = n.div_ceil(64);
    let mut contains = vec![0u64; n * words];
    for (b, seq) in space.seqs.iter().enumerate() {
        for s in space.subsequences(seq) {
            contains[s * words + b / 64] |= 1 << (b % 64);
        }
    }
    // The dynamic program compares tokens only for equality, so a pair and
    // its token relabelling give the same answer; every pair is covered
    // by one whose first sequence is in first-appearance form.
    let mut pairs = 0u64;
    for a in space.seqs.iter().filter(|a| is_first_appearance_form(a)) {
        let mut at_least = vec![vec![0u64; words]; a.len() + 1];
        for s in space.subsequences(a) {
            let len = space.seqs[s].len();
            for (w, x) in at_least[len].iter_mut().zip(&contains[s * words..(s + 1) * words]) {
                *w |= x;
            }
        }
        for (b, seq) in space.seqs.iter().enumerate() {
            let oracle = (0..=a.len()).rev().find(|&k| at_least[k][b / 64] >> (b % 64) & 1 == 1).unwrap_or(0);
            let dp = lcs_len(a, seq);
            check(dp == oracle, || format!("lcs({a:?}, {seq:?}): dp {dp}, enumeration {oracle}"))?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs match enumeration; rouge_l = 0.8 exactly"))
}

fn bench_config(dir: &Path) -> BenchConfig {
    two_region_task().save(dir.join("two_region.json")).unwrap();
    shared_rule_task().save(dir.join("shared_rule.json")).unwrap();
    std::fs::write(dir.join("world.json"), scripted_world().to_json()).unwrap();
    let mut methods = vec![Method::Mop];
    methods.extend(Method::BASELINES);
    BenchConfig {
        tasks: vec![dir.join("two_region.json"), dir.join("shared_rule.json")],
        methods,
        tie_threshold: 1.0,
        workers: None,
        settings: Settings {
            seeds: vec![0, 1, 2],
            provider: ProviderConfig::Mock {
                world: dir.join("world.json"),
            },
            ..Settings::default()
        },
    }
}

fn routing_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for case in 0..1000 {
        let c = rng.random_range(1..=8);
        let dim = rng.random_range(1..=6);
        let centroids = points(&mut rng, c, dim);
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let got = route(&q, &centroids).map_err(|e| e.to_string())?.expert_index;
        let mut best = 0;
        for k in 1..c {
            if squared_distance(&q, &centroids[k]) < squared_distance(&q, &centroids[best]) {
                best = k;
            }
        }
        check(got == best, || format!("case {case}: routed to {got}, scan says {best}"))?;
    }
    // Every MoP build in a bench run routes its validation split; check the
    // split is a partition for each (task, seed).
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = bench_config(dir.path());
    let mut builds = 0;
    for path in &cfg.tasks {
        let task = mop_core::task::load_task(path).map_err(|e| e.to_string())?;
        for &seed in &cfg.settings.seeds {
            let built = build_mop(&engine(), &task, &cfg.settings, SearchKind::Rbjs, seed).map_err(|e| e.to_string())?;
            let split = &built.routed_validation;
            check(split.is_partition_of(&task.validation), || format!("{} seed {seed}: not a partition", task.name))?;
            check(split.decisions.len() == task.validation.len(), || "one decision per item".into())?;
            builds += 1;
        }
    }
    let (results, _) = bench(&cfg, dir.path().join("out")).map_err(|e| e.to_string())?;
    check(results.len() == cfg.tasks.len() * cfg.methods.len(), || "bench result count".into())?;
    Ok(format!("1000 instances match the scan; {builds} routed validation splits are partitions"))
}

fn random_routing_ablation() -> Outcome {
    let task = two_region_task();
    let settings = Settings::default();
    let (mut centroid, mut random) = (0.0, 0.0);
    for seed in 0..10 {
        let e = engine();
        let built = build_mop(&e, &task, &settings, SearchKind::Rbjs, seed).map_err(|e| e.to_string())?;
        let run = |routing| {
            evaluate(&e, &built.artifact, &task.test, task.metric, routing, seed).map(|ev| ev.report.mean)
        };
        centroid += run(RoutingKind::Centroid).map_err(|e| e.to_string())? / 10.0;
        random += run(RoutingKind::Random).map_err(|e| e.to_string())? / 10.0;
    }
    check(centroid > random, || format!("centroid {centroid} vs random {random}"))?;
    Ok(format!("mean over 10 seeds: centroid {centroid:.3} > random {random:.3}"))
}

fn bench_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = bench_config(dir.path());
    let (_, first) = bench(&cfg, dir.path().join("run1")).map_err(|e| e.to_string())?;
    let (_, second) = bench(&cfg, dir.path().join("run2")).map_err(|e| e.to_string())?;
    check(first.len() == second.len(), || "different file sets".into())?;
    for (a, b) in first.iter().zip(&second) {
        check(a.file_name() == b.file_name(), || format!("{a:?} vs {b:?}"))?;
        let (x, y) = (std::fs::read(a).map_err(|e| e.to_string())?, std::fs::read(b).map_err(|e| e.to_string())?);
        check(x == y, || format!("{} differs between runs", a.display()))?;
    }
    Ok(format!("{} report files byte-identical", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("clustering-oracle", clustering_oracle),
        ("inertia-kernel-identity", inertia_identity),
        ("scaled-inertia-recovery", scaled_inertia_recovery),
        ("restriction-exactness", restriction_exactness),
        ("rbjs-end-to-end", rbjs_end_to_end),
        ("budget-parity", budget_parity),
        ("rouge-l-oracle", rouge_oracle),
        ("routing-correctness", routing_correctness),
        ("random-routing-ablation", random_routing_ablation),
        ("bench-determinism", bench_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
