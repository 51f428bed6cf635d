//! Content-addressed call cache. Entries live in memory and, when a
//! directory is configured, as one JSON file per request hash.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{CompletionRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_hash: String,
    pub request: Value,
    pub response: Value,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub bytes_on_disk: u64,
}

#[derive(Debug, Default)]
struct State {
    entries: HashMap<String, Value>,
    hits: u64,
    misses: u64,
}

#[derive(Debug, Default)]
pub struct CallCache {
    dir: Option<PathBuf>,
    state: Mutex<State>,
}

/// Key for a completion: model, temperature, prompt, token limit and stop
/// sequences, each length-prefixed so field boundaries are unambiguous.
pub fn completion_key(model_id: &str, req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    field(&mut h, b"completion");
    field(&mut h, model_id.as_bytes());
    field(&mut h, &req.temperature.to_bits().to_le_bytes());
    field(&mut h, req.prompt.as_bytes());
    field(&mut h, &req.max_output_tokens.to_le_bytes());
    for s in &req.stop_sequences {
        field(&mut h, s.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn embedding_key(model_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    field(&mut h, b"embedding");
    field(&mut h, model_id.as_bytes());
    field(&mut h, text.as_bytes());
    hex::encode(h.finalize())
}

fn field(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

impl CallCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(Self {
            dir: Some(dir),
            state: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    /// Looks up `key`, counting a hit or a miss.
    pub fn get(&self, key: &str) -> Option<Value> {
        let mut state = self.state.lock().expect("cache lock");
        let found = state.entries.get(key).cloned().or_else(|| {
            let path = self.path_for(key)?;
            let text = fs::read_to_string(path).ok()?;
            let record: CacheRecord = serde_json::from_str(&text).ok()?;
            (record.request_hash == key).then_some(record.response)
        });
        match found {
            Some(v) => {
                state.hits += 1;
                state.entries.insert(key.to_string(), v.clone());
                Some(v)
            }
            None => {
                state.misses += 1;
                None
            }
        }
    }

    pub fn put(&self, key: &str, request: Value, response: Value) -> Result<(), ProviderError> {
        let mut state = self.state.lock().expect("cache lock");
        if let Some(path) = self.path_for(key) {
            let record = CacheRecord {
                request_hash: key.to_string(),
                request,
                response: response.clone(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
            };
            let text = serde_json::to_string_pretty(&record).expect("record serializes");
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, text).map_err(|e| cache_err(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))?;
        }
        state.entries.insert(key.to_string(), response);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        let state = self.state.lock().expect("cache lock");
        CacheStats {
            hits: state.hits,
            misses: state.misses,
            bytes_on_disk: self.dir.as_deref().map_or(0, bytes_in),
        }
    }

    /// Drops every entry, in memory and on disk, and resets the counters.
    pub fn clear(&self) -> Result<(), ProviderError> {
        let mut state = self.state.lock().expect("cache lock");
        *state = State::default();
        if let Some(dir) = &self.dir {
            for entry in fs::read_dir(dir).map_err(|e| cache_err(dir, e))? {
                let path = entry.map_err(|e| cache_err(dir, e))?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    fs::remove_file(&path).map_err(|e| cache_err(&path, e))?;
                }
            }
        }
        Ok(())
    }
}

fn bytes_in(dir: &Path) -> u64 {
    fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(Result::ok)
                .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                .filter_map(|e| e.metadata().ok())
                .map(|m| m.len())
                .sum()
        })
        .unwrap_or(0)
}

fn cache_err(path: &Path, e: std::io::Error) -> ProviderError {
    ProviderError::Cache(format!("{}: {e}", path.display()))
}
