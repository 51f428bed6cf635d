//! Completion and embedding backends behind one gateway that adds caching
//! and budget accounting.
//!
//! Backends: [`mock::ScriptedBackend`] answers from a [`mock::ScriptedWorld`]
//! and needs no network; [`http::HttpBackend`] talks to an
//! OpenAI-compatible API.

pub mod budget;
pub mod cache;
pub mod http;
pub mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use budget::{BudgetSnapshot, ProviderBudget};
pub use cache::{CacheStats, CallCache};
pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use mock::{ScriptedBackend, ScriptedWorld, TextTransform};

pub const GENERATION_TEMPERATURE: f64 = 0.9;
pub const EVALUATION_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("{kind} budget of {max} exhausted")]
    BudgetExhausted { kind: &'static str, max: u64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("no scripted embedding for {0:?}")]
    MissingScriptEntry(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Routing(#[from] crate::routing::RoutingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    /// Instruction generation: sampled at 0.9 for diversity.
    pub fn generation(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: GENERATION_TEMPERATURE,
            max_output_tokens: 64,
            stop_sequences: Vec::new(),
        }
    }

    /// Answering a query: greedy, one line.
    pub fn evaluation(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: EVALUATION_TEMPERATURE,
            max_output_tokens: 64,
            stop_sequences: vec!["\n".to_string()],
        }
    }

    pub fn is_generation(&self) -> bool {
        self.temperature > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

pub trait CompletionBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> &str;
    /// One vector per text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// What every pipeline stage talks to. Cheap to clone; clones share the
/// cache and budget.
#[derive(Clone)]
pub struct Provider {
    completion: Arc<dyn CompletionBackend>,
    embedding: Arc<dyn EmbeddingBackend>,
    cache: Arc<CallCache>,
    budget: Arc<ProviderBudget>,
    cache_completions: bool,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("completion_model", &self.completion.model_id())
            .field("embedding_model", &self.embedding.model_id())
            .field("budget", &self.budget.snapshot())
            .finish()
    }
}

impl Provider {
    pub fn new(
        completion: Arc<dyn CompletionBackend>,
        embedding: Arc<dyn EmbeddingBackend>,
        cache: Arc<CallCache>,
        budget: Arc<ProviderBudget>,
    ) -> Self {
        Self {
            completion,
            embedding,
            cache,
            budget,
            cache_completions: true,
        }
    }

    /// Scripted backend for both roles, in-memory cache, no limits.
    pub fn scripted(world: ScriptedWorld) -> Self {
        let backend = Arc::new(ScriptedBackend::new(world));
        Self::new(
            backend.clone(),
            backend,
            Arc::new(CallCache::in_memory()),
            Arc::new(ProviderBudget::unlimited()),
        )
    }

    pub fn with_budget(mut self, budget: ProviderBudget) -> Self {
        self.budget = Arc::new(budget);
        self
    }

    pub fn with_cache(mut self, cache: Arc<CallCache>) -> Self {
        self.cache = cache;
        self
    }

    /// Turns off completion caching, e.g. to compare cached and fresh
    /// answers.
    pub fn without_completion_cache(mut self) -> Self {
        self.cache_completions = false;
        self
    }

    pub fn budget(&self) -> &ProviderBudget {
        &self.budget
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn clear_cache(&self) -> Result<(), ProviderError> {
        self.cache.clear()
    }

    pub fn completion_model_id(&self) -> &str {
        self.completion.model_id()
    }

    pub fn embedding_model_id(&self) -> &str {
        self.embedding.model_id()
    }

    /// Completes `req`. Temperature-0 requests are served from the cache
    /// when possible; only backend calls are charged to the budget.
    pub fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        let cacheable = self.cache_completions && !req.is_generation();
        let key = cacheable.then(|| cache::completion_key(self.completion.model_id(), req));
        if let Some(key) = &key {
            if let Some(v) = self.cache.get(key) {
                return v
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ProviderError::Cache(format!("entry {key} is not text")));
            }
        }
        self.budget.charge_completion(req.is_generation())?;
        let text = self.completion.complete(req)?;
        if let Some(key) = key {
            let request = json!({ "model": self.completion.model_id(), "request": req });
            self.cache.put(&key, request, json!(text))?;
        }
        Ok(text)
    }

    /// Embeds `texts`, order-preserving. Each distinct uncached text is sent
    /// to the backend once.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let model = self.embedding.model_id().to_string();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut pending: Vec<(String, String)> = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let key = cache::embedding_key(&model, text);
            if let Some(v) = self.cache.get(&key) {
                out[i] = Some(serde_json::from_value(v).map_err(|e| ProviderError::Cache(e.to_string()))?);
            } else if !pending.iter().any(|(k, _)| *k == key) {
                pending.push((key, text.clone()));
            }
        }
        if !pending.is_empty() {
            self.budget.charge_embeddings(pending.len() as u64)?;
            let batch: Vec<String> = pending.iter().map(|(_, t)| t.clone()).collect();
            let vectors = self.embedding.embed(&batch)?;
            if vectors.len() != batch.len() {
                return Err(ProviderError::InvalidResponse(format!(
                    "{} embeddings for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            for ((key, text), v) in pending.iter().zip(vectors) {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(ProviderError::InvalidResponse(format!(
                        "non-finite embedding for {text:?}"
                    )));
                }
                self.cache.put(key, json!({ "model": model, "text": text }), json!(v))?;
                for (slot, t) in out.iter_mut().zip(texts) {
                    if slot.is_none() && t == text {
                        *slot = Some(v.clone());
                    }
                }
            }
        }
        let values: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("every text resolved")).collect();
        if let Some(first) = values.first() {
            if let Some(bad) = values.iter().position(|v| v.len() != first.len()) {
                return Err(ProviderError::InvalidResponse(format!(
                    "embedding {bad} has dimension {}, expected {}",
                    values[bad].len(),
                    first.len()
                )));
            }
        }
        Ok(values
            .into_iter()
            .map(|values| EmbeddingVector {
                values,
                model_id: model.clone(),
            })
            .collect())
    }

    /// [`Provider::embed`] returning plain vectors.
    pub fn embed_values(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(self.embed(texts)?.into_iter().map(|e| e.values).collect())
    }
}
