use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mop_core::assignment::MixtureArtifact;
use mop_core::harness::bench::bench;
use mop_core::harness::{
    build_baseline, build_mop, evaluate, evaluate_baseline, hit_ratio, make_ood_split, BenchConfig, Engine,
    ExperimentConfig, Method, ProviderConfig, RoutingKind, RunResult, SeedRun, Settings,
};
use mop_core::providers::{CallCache, HttpConfig};
use mop_core::task::{load_task, TaskDataset};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mop", version, about = "Build, evaluate and benchmark mixtures of prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mixture and save the artifact with its build logs.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Output directory for artifact.json and the logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved artifact on a task's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, value_enum)]
        routing: Option<Routing>,
        /// Write the evaluation (report and per-item predictions) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a baseline over the config's seeds.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Baseline name, e.g. ape or ape_plus_k_centroids. Defaults to the
        /// config's method.
        #[arg(long)]
        method: Option<String>,
        /// Write the run result here; the chosen prompts go next to it as
        /// `<name>.prompts.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run methods x tasks x seeds and write the report files.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-split a task into in-distribution train and out-of-distribution test.
    OodSplit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count, per test item, how many experts' demos alone answer it.
    HitRatio {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        artifact: PathBuf,
    },
    /// Inspect or clear an on-disk call cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    Clear {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Routing {
    Centroid,
    Random,
}

/// Options shared by the single-experiment commands. `--config` supplies
/// defaults; the other flags override it.
#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task file; overrides the config's task_path.
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Scripted world file for the mock provider.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

struct Resolved {
    task: TaskDataset,
    method: Method,
    settings: Settings,
}

impl Resolved {
    fn seed(&self) -> u64 {
        self.settings.seeds[0]
    }

    fn engine(&self) -> Result<Engine> {
        Ok(Engine::new(self.settings.provider()?))
    }
}

impl Common {
    fn resolve(&self) -> Result<Resolved> {
        let (task_path, method, mut settings) = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
                (Some(cfg.task_path), cfg.method, cfg.settings)
            }
            None => (None, Method::Mop, Settings::default()),
        };
        let task_path = self
            .task
            .clone()
            .or(task_path)
            .context("no task: pass --task or --config")?;
        if let Some(seed) = self.seed {
            settings.seeds = vec![seed];
        }
        match (self.provider, &self.world) {
            (Some(ProviderKind::Http), _) => {
                if !matches!(settings.provider, ProviderConfig::Http(_)) {
                    settings.provider = ProviderConfig::Http(HttpConfig::default());
                }
            }
            (_, Some(world)) => settings.provider = ProviderConfig::Mock { world: world.clone() },
            (Some(ProviderKind::Mock), None) if self.config.is_none() => {
                bail!("--provider mock needs --world or a config naming one")
            }
            _ if self.config.is_none() => bail!("pass --config, or --provider with its options"),
            _ => {}
        }
        if let Some(dir) = &self.cache_dir {
            settings.cache_dir = Some(dir.clone());
        }
        settings.validate()?;
        let task = load_task(&task_path).with_context(|| format!("loading {}", task_path.display()))?;
        Ok(Resolved { task, method, settings })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize { common, out } => {
            let r = common.resolve()?;
            let kind = match r.method {
                Method::Mop => Default::default(),
                Method::MopVariant(kind) => kind,
                other => bail!("optimize builds mixtures; {other} is a baseline (use `mop baseline`)"),
            };
            let built = build_mop(&r.engine()?, &r.task, &r.settings, kind, r.seed())?;
            built.write_logs(&out)?;
            eprintln!(
                "built {} experts for {} (C* = {}), artifact {}",
                built.artifact.experts.len(),
                r.task.name,
                built.c_star,
                out.join("artifact.json").display()
            );
            print_json(&serde_json::json!({
                "artifact": out.join("artifact.json"),
                "artifact_digest": built.artifact.digest(),
                "C": built.artifact.experts.len(),
                "local_val_scores": built.artifact.experts.iter().map(|e| e.local_val_score).collect::<Vec<_>>(),
            }))
        }
        Command::Evaluate {
            common,
            artifact,
            routing,
            out,
        } => {
            let r = common.resolve()?;
            let artifact = MixtureArtifact::load(&artifact)?;
            let routing = match routing {
                Some(Routing::Centroid) => RoutingKind::Centroid,
                Some(Routing::Random) => RoutingKind::Random,
                None => r.settings.routing,
            };
            let ev = evaluate(&r.engine()?, &artifact, &r.task.test, r.task.metric, routing, r.seed())?;
            if let Some(out) = out {
                write_json(&out, &ev)?;
            }
            print_json(&serde_json::json!({
                "report": { "mean": ev.report.mean, "metric": ev.report.metric, "items": ev.report.per_item.len() },
                "routed_counts": ev.routed_counts,
            }))
        }
        Command::Baseline { common, method, out } => {
            let mut r = common.resolve()?;
            if let Some(m) = method {
                r.method = m.parse()?;
            }
            if !r.method.is_baseline() {
                bail!("{} is not a baseline; pass --method", r.method);
            }
            let mut runs = Vec::new();
            let mut prompts = Vec::new();
            for &seed in &r.settings.seeds {
                let engine = r.engine()?;
                let prompt = build_baseline(&engine, &r.task, &r.settings, r.method, seed)?;
                let ev = evaluate_baseline(&engine, &prompt, &r.task.train, &r.task.test, r.task.metric)?;
                runs.push(SeedRun {
                    seed,
                    test_score: ev.report.mean,
                    generation_calls: engine.provider.budget().used_generations(),
                    artifact_digest: prompt.digest(),
                });
                prompts.push(prompt);
            }
            let result = RunResult::from_runs(r.method, r.task.name.clone(), &runs);
            if let Some(out) = &out {
                write_json(out, &result)?;
                write_json(&out.with_extension("prompts.json"), &prompts)?;
            }
            print_json(&result)
        }
        Command::Bench { config, out, workers } => {
            let mut cfg = BenchConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if workers.is_some() {
                cfg.workers = workers;
            }
            let (results, files) = bench(&cfg, &out)?;
            for f in &files {
                eprintln!("wrote {}", f.display());
            }
            print_json(&results)
        }
        Command::OodSplit { common, out } => {
            let r = common.resolve()?;
            let split = make_ood_split(&r.engine()?, &r.task, r.seed())?;
            split.task.save(&out)?;
            print_json(&serde_json::json!({
                "out": out,
                "cluster_sizes": split.cluster_sizes,
                "train_cluster": split.train_cluster,
                "train": split.task.train.len(),
                "validation": split.task.validation.len(),
                "test": split.task.test.len(),
            }))
        }
        Command::HitRatio { common, artifact } => {
            let r = common.resolve()?;
            let artifact = MixtureArtifact::load(&artifact)?;
            let h = hit_ratio(&r.engine()?, &artifact, &r.task.test, r.task.metric)?;
            print_json(&serde_json::json!({
                "C": h.c,
                "counts": h.counts,
                "fractions": h.fractions(),
            }))
        }
        Command::Cache { action } => match action {
            CacheAction::Stats { dir } => {
                let s = CallCache::on_disk(&dir)?.stats();
                let entries = std::fs::read_dir(&dir)?.filter(|e| {
                    e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "json"))
                });
                print_json(&serde_json::json!({
                    "dir": dir,
                    "entries": entries.count(),
                    "bytes_on_disk": s.bytes_on_disk,
                }))
            }
            CacheAction::Clear { dir } => {
                CallCache::on_disk(&dir)?.clear()?;
                eprintln!("cleared {}", dir.display());
                Ok(())
            }
        },
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
