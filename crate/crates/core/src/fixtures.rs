//! Small synthetic tasks and a matching scripted world for offline runs.
//!
//! `two_region` has inputs near (0, 0) whose answer is the input in upper
//! case and inputs near (10, 10) whose answer is the input with its words
//! reversed. Pool instruction "inst A" uppercases and "inst B" reverses,
//! so each is right on exactly one region. `shared_rule` has two regions
//! that both reverse words. The same files are checked in under
//! `fixtures/` at the crate root.

use std::collections::BTreeMap;

use rand::Rng;

use crate::providers::mock::{GenerationOrder, PoolEntry};
use crate::providers::{ScriptedWorld, TextTransform};
use crate::seed;
use crate::task::{Demo, Metric, TaskDataset};

pub const INSTRUCTION_A: &str = "inst A";
pub const INSTRUCTION_B: &str = "inst B";

struct Region {
    prefix: &'static str,
    centre: [f64; 2],
    phrases: Vec<String>,
    rule: TextTransform,
}

fn phrases(parts: &[&[&str]]) -> Vec<String> {
    let mut out = vec![String::new()];
    for words in parts {
        out = out
            .iter()
            .flat_map(|p| {
                words.iter().map(move |w| {
                    if p.is_empty() {
                        w.to_string()
                    } else {
                        format!("{p} {w}")
                    }
                })
            })
            .collect();
    }
    out
}

fn two_region_regions() -> Vec<Region> {
    vec![
        Region {
            prefix: "u",
            centre: [0.0, 0.0],
            phrases: phrases(&[
                &["red", "quiet", "small", "bright", "old", "warm"],
                &["fox", "river", "lamp", "garden"],
            ]),
            rule: TextTransform::Upper,
        },
        Region {
            prefix: "r",
            centre: [10.0, 10.0],
            phrases: phrases(&[
                &["blue", "green", "tall"],
                &["whale", "tower", "cloud", "stone"],
                &["sings", "falls", "waits"],
            ]),
            rule: TextTransform::ReverseWords,
        },
    ]
}

fn shared_rule_regions() -> Vec<Region> {
    vec![
        Region {
            prefix: "n",
            centre: [0.0, 10.0],
            phrases: phrases(&[&["north", "south", "east", "west"], &["gate", "road", "bridge", "hill"]]),
            rule: TextTransform::ReverseWords,
        },
        Region {
            prefix: "o",
            centre: [10.0, 0.0],
            phrases: phrases(&[&["upper", "lower", "inner", "outer"], &["field", "wall", "port", "yard"]]),
            rule: TextTransform::ReverseWords,
        },
    ]
}

/// Splits sizes per region: (train, validation, test).
fn build(name: &str, regions: &[Region], sizes: (usize, usize, usize)) -> TaskDataset {
    let (n_train, n_val, n_test) = sizes;
    let mut task = TaskDataset {
        name: name.to_string(),
        metric: Metric::ExactMatch,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for region in regions {
        assert!(region.phrases.len() >= n_train + n_val + n_test);
        for (i, phrase) in region.phrases.iter().take(n_train + n_val + n_test).enumerate() {
            let demo = Demo::new(format!("{}{i:02}", region.prefix), phrase.clone(), region.rule.apply(phrase));
            if i < n_train {
                task.train.push(demo);
            } else if i < n_train + n_val {
                task.validation.push(demo);
            } else {
                task.test.push(demo);
            }
        }
    }
    task
}

pub fn two_region_task() -> TaskDataset {
    build("two_region", &two_region_regions(), (12, 4, 6))
}

pub fn shared_rule_task() -> TaskDataset {
    build("shared_rule", &shared_rule_regions(), (8, 4, 4))
}

/// Pool `[inst A -> upper, inst B -> reverse words]` generated round-robin,
/// with an embedding for every input of both tasks: each region's centre
/// plus a seeded offset in [-1, 1]^2.
pub fn scripted_world() -> ScriptedWorld {
    let mut table = BTreeMap::new();
    for (k, region) in two_region_regions().iter().chain(&shared_rule_regions()).enumerate() {
        let mut rng = seed::rng(7, "fixture-embedding", k as u64);
        for phrase in &region.phrases {
            let v: Vec<f64> = region
                .centre
                .iter()
                .map(|c| {
                    let offset: f64 = rng.random_range(-1.0..1.0);
                    c + (offset * 1000.0).round() / 1000.0
                })
                .collect();
            table.insert(phrase.clone(), v);
        }
    }
    ScriptedWorld {
        model_id: "scripted-completion".into(),
        embedding_model_id: "scripted-embedding".into(),
        instruction_pool: vec![
            PoolEntry {
                instruction: INSTRUCTION_A.into(),
                rule: TextTransform::Upper,
            },
            PoolEntry {
                instruction: INSTRUCTION_B.into(),
                rule: TextTransform::ReverseWords,
            },
        ],
        embedding_table: table,
        generation_order: GenerationOrder::RoundRobin,
    }
}
