use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::assignment::{SearchKind, DEFAULT_GENERATION_DEMOS};
use crate::clustering::select::DEFAULT_ALPHA;
use crate::clustering::InertiaScaling;
use crate::providers::{
    CallCache, HttpBackend, HttpConfig, Provider, ProviderBudget, ScriptedBackend, ScriptedWorld,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mop,
    Ape,
    ApePlusRandomDemos,
    ApePlusKCentroids,
    ApePlusNearestNeighbor,
    MopVariant(SearchKind),
}

impl Method {
    pub const BASELINES: [Method; 4] = [
        Method::Ape,
        Method::ApePlusRandomDemos,
        Method::ApePlusKCentroids,
        Method::ApePlusNearestNeighbor,
    ];

    pub fn label(&self) -> String {
        match self {
            Method::Mop => "MoP".into(),
            Method::Ape => "APE".into(),
            Method::ApePlusRandomDemos => "APE+RandomDemos".into(),
            Method::ApePlusKCentroids => "APE+KCentroids".into(),
            Method::ApePlusNearestNeighbor => "APE+NearestNeighbor".into(),
            Method::MopVariant(kind) => format!("MoP[{}]", search_kind_name(*kind)),
        }
    }

    pub fn is_baseline(&self) -> bool {
        Self::BASELINES.contains(self)
    }
}

fn search_kind_name(kind: SearchKind) -> &'static str {
    match kind {
        SearchKind::Rbjs => "rbjs",
        SearchKind::IndependentSearch => "independent_search",
        SearchKind::JointSearch => "joint_search",
        SearchKind::RbjsSameCluster => "rbjs_same_cluster",
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    /// Accepts the snake_case names (`mop`, `ape`, `ape_plus_k_centroids`,
    /// `mop_variant:joint_search`, ...) and the display labels.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        let unknown = || HarnessError::Config(format!("unknown method {s:?}"));
        if let Some(kind) = key
            .strip_prefix("mop_variant:")
            .or_else(|| key.strip_prefix("mop[").and_then(|k| k.strip_suffix(']')))
        {
            let kind = [
                SearchKind::Rbjs,
                SearchKind::IndependentSearch,
                SearchKind::JointSearch,
                SearchKind::RbjsSameCluster,
            ]
            .into_iter()
            .find(|k| search_kind_name(*k) == kind)
            .ok_or_else(unknown)?;
            return Ok(Method::MopVariant(kind));
        }
        match key.as_str() {
            "mop" => Ok(Method::Mop),
            "ape" => Ok(Method::Ape),
            "ape_plus_random_demos" | "ape_randomdemos" => Ok(Method::ApePlusRandomDemos),
            "ape_plus_k_centroids" | "ape_kcentroids" => Ok(Method::ApePlusKCentroids),
            "ape_plus_nearest_neighbor" | "ape_nearestneighbor" => Ok(Method::ApePlusNearestNeighbor),
            _ => Err(unknown()),
        }
    }
}

/// How test queries reach experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingKind {
    #[default]
    Centroid,
    /// Uniform seeded assignment, for the routing ablation.
    Random,
}

/// A positive rational written as `"num/den"` (or a bare integer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self, HarnessError> {
        if num == 0 || den == 0 {
            return Err(HarnessError::Config(format!("fraction {num}/{den} must be positive")));
        }
        Ok(Self { num, den })
    }

    /// `ceil(self * n)`, at least 1.
    pub fn cap(&self, n: usize) -> usize {
        let n = n as u64;
        (self.num * n).div_ceil(self.den).max(1) as usize
    }
}

impl Default for Fraction {
    fn default() -> Self {
        Self { num: 1, den: 10 }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Config(format!("invalid fraction {s:?}"));
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        Fraction::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?)
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Mock { world: PathBuf },
    Http(HttpConfig),
}

/// Everything about a run except which task and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub total_budget: usize,
    pub alpha: f64,
    #[serde(rename = "C_min")]
    pub c_min: usize,
    #[serde(rename = "C_max")]
    pub c_max: usize,
    pub inertia_scaling: InertiaScaling,
    /// Demos per expert (and per baseline prompt), as a fraction of the
    /// training split.
    pub demo_cap_fraction: Fraction,
    /// Demos shown per generation prompt.
    pub generation_demos: usize,
    /// Validation items used to rank APE candidates; `None` uses the whole
    /// split.
    pub validation_sample: Option<usize>,
    /// Centroids used by the K-centroids baseline; `None` uses the demo cap.
    pub centroid_demos: Option<usize>,
    /// Embed `input + "\n" + output` instead of the input alone when
    /// clustering demos.
    pub embed_outputs: bool,
    pub routing: RoutingKind,
    pub seeds: Vec<u64>,
    pub provider: ProviderConfig,
    pub cache_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            total_budget: 20,
            alpha: DEFAULT_ALPHA,
            c_min: 1,
            c_max: 4,
            inertia_scaling: InertiaScaling::Normalized,
            demo_cap_fraction: Fraction::default(),
            generation_demos: DEFAULT_GENERATION_DEMOS,
            validation_sample: None,
            centroid_demos: None,
            embed_outputs: false,
            routing: RoutingKind::Centroid,
            seeds: vec![0],
            provider: ProviderConfig::Mock {
                world: PathBuf::from("world.json"),
            },
            cache_dir: None,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.total_budget == 0 {
            return bad("total_budget must be at least 1");
        }
        if self.c_min == 0 || self.c_min > self.c_max {
            return bad("need 1 <= C_min <= C_max");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and non-negative");
        }
        if self.generation_demos == 0 {
            return bad("generation_demos must be at least 1");
        }
        if self.validation_sample == Some(0) || self.centroid_demos == Some(0) {
            return bad("validation_sample and centroid_demos must be positive");
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        if let ProviderConfig::Mock { world } = &mut self.provider {
            *world = base.join(&*world);
        }
        if let Some(dir) = &mut self.cache_dir {
            *dir = base.join(&*dir);
        }
    }

    /// A fresh provider whose generation budget is `total_budget`. Every
    /// call returns independent state (scripted generation order, budget);
    /// only an on-disk cache is shared.
    pub fn provider(&self) -> Result<Provider, HarnessError> {
        let cache = Arc::new(match &self.cache_dir {
            Some(dir) => CallCache::on_disk(dir)?,
            None => CallCache::in_memory(),
        });
        let budget = Arc::new(ProviderBudget::with_generation_limit(self.total_budget as u64));
        Ok(match &self.provider {
            ProviderConfig::Mock { world } => {
                let backend = Arc::new(ScriptedBackend::new(ScriptedWorld::load(world)?));
                Provider::new(backend.clone(), backend, cache, budget)
            }
            ProviderConfig::Http(http) => {
                let backend = Arc::new(HttpBackend::new(http.clone())?);
                Provider::new(backend.clone(), backend, cache, budget)
            }
        })
    }

    /// Scripted provider from an in-memory world, for tests and tools.
    pub fn scripted_provider(&self, world: ScriptedWorld) -> Provider {
        Provider::scripted(world).with_budget(ProviderBudget::with_generation_limit(self.total_budget as u64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task_path: PathBuf,
    pub method: Method,
    #[serde(flatten)]
    pub settings: Settings,
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.task_path = base.join(&cfg.task_path);
        cfg.settings.resolve(base);
        cfg.settings.validate()?;
        Ok(cfg)
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub tasks: Vec<PathBuf>,
    pub methods: Vec<Method>,
    /// Percentage points below which two means tie.
    #[serde(default = "default_tie_threshold")]
    pub tie_threshold: f64,
    /// Worker threads; `None` uses the available cores.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(flatten)]
    pub settings: Settings,
}

fn default_tie_threshold() -> f64 {
    1.0
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut cfg.tasks {
            *t = base.join(&*t);
        }
        cfg.settings.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.settings.validate()?;
        if self.tasks.is_empty() || self.methods.is_empty() {
            return Err(HarnessError::Config("bench needs at least one task and one method".into()));
        }
        Ok(())
    }

    /// Config for one cell of the grid.
    pub fn experiment(&self, task: usize, method: Method) -> ExperimentConfig {
        ExperimentConfig {
            task_path: self.tasks[task].clone(),
            method,
            settings: self.settings.clone(),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
