//! Deterministic offline backend.
//!
//! Generation prompts are answered with instructions from a fixed pool in
//! a scripted order. Evaluation prompts are parsed back into instruction,
//! demos and query: a pool instruction applies its rule to the query, and
//! otherwise the rule agreeing with the most demos is applied. Embeddings
//! are looked up in a table.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionBackend, CompletionRequest, EmbeddingBackend, ProviderError};
use crate::prompt::TemplateSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextTransform {
    Identity,
    Upper,
    Lower,
    /// Reverses the order of whitespace-separated words.
    ReverseWords,
    Constant { value: String },
}

impl TextTransform {
    pub fn apply(&self, input: &str) -> String {
        match self {
            TextTransform::Identity => input.to_string(),
            TextTransform::Upper => input.to_uppercase(),
            TextTransform::Lower => input.to_lowercase(),
            TextTransform::ReverseWords => {
                input.split_whitespace().rev().collect::<Vec<_>>().join(" ")
            }
            TextTransform::Constant { value } => value.clone(),
        }
    }

    const BUILTIN: [TextTransform; 4] = [
        TextTransform::Upper,
        TextTransform::Lower,
        TextTransform::ReverseWords,
        TextTransform::Identity,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub instruction: String,
    pub rule: TextTransform,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationOrder {
    /// Call `n` returns pool entry `n mod |pool|`.
    #[default]
    RoundRobin,
    /// Call `n` returns pool entry `indices[n mod |indices|]`.
    Sequence { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedWorld {
    pub model_id: String,
    pub embedding_model_id: String,
    pub instruction_pool: Vec<PoolEntry>,
    pub embedding_table: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub generation_order: GenerationOrder,
}

impl ScriptedWorld {
    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let world: Self =
            serde_json::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("world serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.instruction_pool.is_empty() {
            return Err(ProviderError::Config("instruction pool is empty".into()));
        }
        if let GenerationOrder::Sequence { indices } = &self.generation_order {
            if indices.is_empty() || indices.iter().any(|&i| i >= self.instruction_pool.len()) {
                return Err(ProviderError::Config(
                    "generation sequence must be non-empty and index the pool".into(),
                ));
            }
        }
        let mut dims = self.embedding_table.values().map(Vec::len);
        if let Some(d) = dims.next() {
            if dims.any(|x| x != d) {
                return Err(ProviderError::Config("embedding dimensions differ".into()));
            }
        }
        if self.embedding_table.values().flatten().any(|x| !x.is_finite()) {
            return Err(ProviderError::Config("embedding table has non-finite values".into()));
        }
        Ok(())
    }

    /// The answer the world gives to an evaluation prompt's parts.
    pub fn answer(&self, instruction: &str, demos: &[(String, String)], query: &str) -> String {
        let instruction = instruction.trim();
        if let Some(entry) = self
            .instruction_pool
            .iter()
            .find(|e| !instruction.is_empty() && e.instruction.trim() == instruction)
        {
            return entry.rule.apply(query);
        }
        self.rule_from_demos(demos).apply(query)
    }

    /// The rule consistent with the most demos; pool rules are tried before
    /// the built-in ones and earlier rules win ties. With no agreeing rule
    /// the query is echoed.
    pub fn rule_from_demos(&self, demos: &[(String, String)]) -> TextTransform {
        let mut candidates: Vec<TextTransform> = Vec::new();
        for rule in self
            .instruction_pool
            .iter()
            .map(|e| e.rule.clone())
            .chain(TextTransform::BUILTIN)
        {
            if !candidates.contains(&rule) {
                candidates.push(rule);
            }
        }
        let mut best = (0, TextTransform::Identity);
        for rule in candidates {
            let agree = demos.iter().filter(|(x, y)| rule.apply(x) == *y).count();
            if agree > best.0 {
                best = (agree, rule);
            }
        }
        best.1
    }
}

pub struct ScriptedBackend {
    world: ScriptedWorld,
    templates: TemplateSet,
    generated: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(world: ScriptedWorld) -> Self {
        Self::with_templates(world, TemplateSet::default())
    }

    pub fn with_templates(world: ScriptedWorld, templates: TemplateSet) -> Self {
        Self {
            world,
            templates,
            generated: Mutex::new(0),
        }
    }

    pub fn world(&self) -> &ScriptedWorld {
        &self.world
    }

    fn next_instruction(&self) -> String {
        let mut n = self.generated.lock().expect("generation counter");
        let pool = &self.world.instruction_pool;
        let index = match &self.world.generation_order {
            GenerationOrder::RoundRobin => *n % pool.len(),
            GenerationOrder::Sequence { indices } => indices[*n % indices.len()],
        };
        *n += 1;
        pool[index].instruction.clone()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.world.model_id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        if self.templates.parse_generation(&req.prompt).is_some() {
            return Ok(self.next_instruction());
        }
        let parsed = self.templates.parse_evaluation(&req.prompt).ok_or_else(|| {
            ProviderError::InvalidResponse("prompt does not match a known template".into())
        })?;
        Ok(self.world.answer(&parsed.instruction, &parsed.demos, &parsed.query))
    }
}

impl EmbeddingBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.world.embedding_model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.world
                    .embedding_table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::MissingScriptEntry(t.clone()))
            })
            .collect()
    }
}
