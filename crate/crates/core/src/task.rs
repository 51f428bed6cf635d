//! Demonstration records and task datasets.
//!
//! A task file is a single JSON document:
//!
//! ```json
//! {"name": "antonyms", "metric": "exact_match",
//!  "train": [{"id": "t0", "input": "won", "outputs": ["lost"]}],
//!  "validation": [], "test": []}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("failed to read task file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed task file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid task: {0}")]
    Validation(String),
}

/// One (input, acceptable outputs) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub id: String,
    pub input: String,
    pub outputs: Vec<String>,
}

impl Demo {
    pub fn new(id: impl Into<String>, input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input: input.into(),
            outputs: vec![output.into()],
        }
    }

    /// The output shown when the demo is listed inside a prompt.
    pub fn primary_output(&self) -> &str {
        self.outputs.first().map(String::as_str).unwrap_or("")
    }
}

/// Scoring metric used for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    SetMatch,
    RougeL,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::ExactMatch => "exact_match",
            Metric::SetMatch => "set_match",
            Metric::RougeL => "rouge_l",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub name: String,
    pub metric: Metric,
    pub train: Vec<Demo>,
    pub validation: Vec<Demo>,
    pub test: Vec<Demo>,
}

impl TaskDataset {
    /// Checks demo and split invariants: non-empty outputs, unique ids
    /// within each split, and pairwise-disjoint splits.
    pub fn validate(&self) -> Result<(), TaskError> {
        let mut seen: HashSet<&str> = HashSet::new();
        for (split, demos) in self.splits() {
            let mut local: HashSet<&str> = HashSet::new();
            for demo in demos {
                if demo.outputs.is_empty() {
                    return Err(TaskError::Validation(format!(
                        "demo {:?} in {split} has no outputs",
                        demo.id
                    )));
                }
                if !local.insert(demo.id.as_str()) {
                    return Err(TaskError::Validation(format!(
                        "duplicate id {:?} in {split}",
                        demo.id
                    )));
                }
                if !seen.insert(demo.id.as_str()) {
                    return Err(TaskError::Validation(format!(
                        "id {:?} appears in more than one split",
                        demo.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn splits(&self) -> [(&'static str, &[Demo]); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let task: TaskDataset = serde_json::from_str(text)?;
        task.validate()?;
        Ok(task)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("task serializes");
        out.push('\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaskError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads and validates a task file.
pub fn load_task(path: impl AsRef<Path>) -> Result<TaskDataset, TaskError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TaskDataset::from_json(&text)
}
