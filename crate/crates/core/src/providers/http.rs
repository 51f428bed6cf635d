//! OpenAI-compatible HTTP backend (`/completions`, `/embeddings`).

use std::time::Duration;

use rand::Rng;
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionBackend, CompletionRequest, EmbeddingBackend, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Scales each delay by a uniform factor in [0.5, 1.5).
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), before jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(32));
        Duration::from_millis(exp.min(self.max_delay_ms))
    }

    fn sleep_before(&self, attempt: u32, floor: Option<Duration>) {
        let mut d = self.backoff(attempt);
        if self.jitter {
            d = d.mul_f64(rand::rng().random_range(0.5..1.5));
        }
        if let Some(f) = floor {
            d = d.max(f.min(Duration::from_millis(self.max_delay_ms)));
        }
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub completion_model: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            completion_model: "gpt-3.5-turbo-instruct".into(),
            embedding_model: "text-embedding-ada-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: Client,
}

enum Failure {
    Retry { rate_limited: bool, wait: Option<Duration>, message: String },
    Fatal(ProviderError),
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable. A
    /// missing key is allowed for local servers that need none.
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpConfig, api_key: Option<String>) -> Result<Self, ProviderError> {
        if config.retry.max_attempts == 0 {
            return Err(ProviderError::Config("max_attempts must be at least 1".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let policy = &self.config.retry;
        let mut last_rate_limited = false;
        let mut last_message = String::new();
        for attempt in 1..=policy.max_attempts {
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let outcome = match req.send() {
                Ok(resp) => classify(resp),
                Err(e) => Err(Failure::Retry {
                    rate_limited: false,
                    wait: None,
                    message: e.to_string(),
                }),
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry { rate_limited, wait, message }) => {
                    tracing::warn!(%url, attempt, %message, "request failed");
                    last_rate_limited = rate_limited;
                    last_message = message;
                    if attempt < policy.max_attempts {
                        policy.sleep_before(attempt, wait);
                    }
                }
            }
        }
        if last_rate_limited {
            Err(ProviderError::RateLimited {
                attempts: policy.max_attempts,
            })
        } else {
            Err(ProviderError::Transport(format!(
                "{last_message} (after {} attempts)",
                policy.max_attempts
            )))
        }
    }
}

fn classify(resp: Response) -> Result<Value, Failure> {
    let status = resp.status();
    let wait = resp
        .headers()
        .get(reqwest::header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs);
    let text = resp.text().unwrap_or_default();
    if status == StatusCode::TOO_MANY_REQUESTS {
        return Err(Failure::Retry {
            rate_limited: true,
            wait,
            message: format!("{status}"),
        });
    }
    if status.is_server_error() || status == StatusCode::REQUEST_TIMEOUT {
        return Err(Failure::Retry {
            rate_limited: false,
            wait,
            message: format!("{status}: {text}"),
        });
    }
    if !status.is_success() {
        return Err(Failure::Fatal(ProviderError::Transport(format!("{status}: {text}"))));
    }
    serde_json::from_str(&text).map_err(|e| Failure::Fatal(ProviderError::InvalidResponse(e.to_string())))
}

impl CompletionBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.completion_model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.config.completion_model,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        let v = self.post("completions", &body)?;
        v.pointer("/choices/0/text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::InvalidResponse("missing choices[0].text".into()))
    }
}

impl EmbeddingBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.embedding_model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": self.config.embedding_model, "input": texts });
        let v = self.post("embeddings", &body)?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::InvalidResponse("missing data".into()))?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let vector: Vec<f64> = item
                .get("embedding")
                .cloned()
                .and_then(|e| serde_json::from_value(e).ok())
                .ok_or_else(|| ProviderError::InvalidResponse(format!("bad embedding at {pos}")))?;
            let slot = out
                .get_mut(index)
                .ok_or_else(|| ProviderError::InvalidResponse(format!("index {index} out of range")))?;
            *slot = Some(vector);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| ProviderError::InvalidResponse(format!("no embedding for input {i}"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_up_to_the_cap() {
        let p = RetryPolicy {
            base_delay_ms: 100,
            max_delay_ms: 350,
            ..RetryPolicy::default()
        };
        let ms: Vec<u128> = (1..=4).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 350, 350]);
    }

    #[test]
    fn zero_attempts_is_rejected() {
        let config = HttpConfig {
            retry: RetryPolicy {
                max_attempts: 0,
                ..RetryPolicy::default()
            },
            ..HttpConfig::default()
        };
        assert!(HttpBackend::with_key(config, None).is_err());
    }
}
