//! Task metrics: execution accuracy (exact match), set-style match and
//! ROUGE-L, over a shared normalization pipeline.
//!
//! Normalization, in order: lowercase, collapse runs of whitespace to a
//! single space and strip it from both ends, then strip trailing
//! `. , ; : ! ?` (and any whitespace they uncover).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{Demo, Metric};

const TERMINAL_PUNCTUATION: [char; 6] = ['.', ',', ';', ':', '!', '?'];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("{predictions} predictions for {golds} gold items")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("cannot score an empty batch")]
    EmptyBatch,
}

/// Text normalization applied before every comparison. The defaults are the
/// documented pipeline; tasks where punctuation or case is the answer can
/// switch steps off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lowercase: bool,
    pub strip_terminal_punctuation: bool,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_terminal_punctuation: true,
        }
    }
}

impl Normalizer {
    pub fn apply(&self, text: &str) -> String {
        let cased = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        let collapsed = cased.split_whitespace().collect::<Vec<_>>().join(" ");
        if self.strip_terminal_punctuation {
            collapsed
                .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
                .to_string()
        } else {
            collapsed
        }
    }
}

/// Normalizes with the default pipeline.
pub fn normalize(text: &str) -> String {
    Normalizer::default().apply(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scorer {
    pub normalizer: Normalizer,
    pub set_separator: char,
}

impl Default for Scorer {
    fn default() -> Self {
        Self {
            normalizer: Normalizer::default(),
            set_separator: ',',
        }
    }
}

impl Scorer {
    pub fn exact_match(&self, prediction: &str, acceptable: &[String]) -> f64 {
        let pred = self.normalizer.apply(prediction);
        let hit = acceptable
            .iter()
            .any(|gold| self.normalizer.apply(gold) == pred);
        if hit {
            1.0
        } else {
            0.0
        }
    }

    /// Fraction of the gold answer set recovered by the prediction.
    pub fn set_match(&self, prediction: &str, acceptable: &[String]) -> f64 {
        let gold: BTreeSet<String> = acceptable
            .iter()
            .map(|g| self.normalizer.apply(g))
            .collect();
        if gold.is_empty() {
            return 0.0;
        }
        let predicted: BTreeSet<String> = prediction
            .split(self.set_separator)
            .map(|p| self.normalizer.apply(p))
            .filter(|p| !p.is_empty())
            .collect();
        gold.intersection(&predicted).count() as f64 / gold.len() as f64
    }

    pub fn rouge_l(&self, prediction: &str, reference: &str) -> f64 {
        let pred = self.normalizer.apply(prediction);
        let refr = self.normalizer.apply(reference);
        let p: Vec<&str> = pred.split_whitespace().collect();
        let r: Vec<&str> = refr.split_whitespace().collect();
        if p.is_empty() || r.is_empty() {
            return 0.0;
        }
        let lcs = lcs_len(&p, &r) as f64;
        if lcs == 0.0 {
            return 0.0;
        }
        let precision = lcs / p.len() as f64;
        let recall = lcs / r.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }

    /// Scores one prediction against a demo's acceptable outputs.
    /// ROUGE-L takes the best score over the acceptable outputs.
    pub fn score(&self, metric: Metric, prediction: &str, gold: &Demo) -> f64 {
        match metric {
            Metric::ExactMatch => self.exact_match(prediction, &gold.outputs),
            Metric::SetMatch => self.set_match(prediction, &gold.outputs),
            Metric::RougeL => gold
                .outputs
                .iter()
                .map(|r| self.rouge_l(prediction, r))
                .fold(0.0, f64::max),
        }
    }

    pub fn score_batch(
        &self,
        predictions: &[String],
        golds: &[Demo],
        metric: Metric,
    ) -> Result<ScoreReport, ScoreError> {
        if predictions.len() != golds.len() {
            return Err(ScoreError::LengthMismatch {
                predictions: predictions.len(),
                golds: golds.len(),
            });
        }
        let per_item = predictions
            .iter()
            .zip(golds)
            .map(|(p, g)| self.score(metric, p, g))
            .collect();
        ScoreReport::new(per_item, metric)
    }
}

pub fn exact_match(prediction: &str, acceptable: &[String]) -> f64 {
    Scorer::default().exact_match(prediction, acceptable)
}

pub fn set_match(prediction: &str, acceptable: &[String]) -> f64 {
    Scorer::default().set_match(prediction, acceptable)
}

pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    Scorer::default().rouge_l(prediction, reference)
}

pub fn score_batch(
    predictions: &[String],
    golds: &[Demo],
    metric: Metric,
) -> Result<ScoreReport, ScoreError> {
    Scorer::default().score_batch(predictions, golds, metric)
}

/// Length of the longest common subsequence, O(|a|·|b|) time and
/// O(min) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_item: Vec<f64>,
    pub mean: f64,
    pub metric: Metric,
}

impl ScoreReport {
    pub fn new(per_item: Vec<f64>, metric: Metric) -> Result<Self, ScoreError> {
        if per_item.is_empty() {
            return Err(ScoreError::EmptyBatch);
        }
        let mean = per_item.iter().sum::<f64>() / per_item.len() as f64;
        Ok(Self {
            per_item,
            mean,
            metric,
        })
    }
}
