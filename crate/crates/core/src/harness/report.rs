use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::build::pretty_json;
use super::{HarnessError, RunResult};

/// Pairwise win rates. `values[a][b]` is the share of tasks method `a`
/// wins against `b`, counting a tie as half a win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub methods: Vec<String>,
    pub tasks: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl WinRateMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == a)?;
        let j = self.methods.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for m in &self.methods {
            let _ = write!(s, ",{}", csv_field(m));
        }
        s.push('\n');
        for (m, row) in self.methods.iter().zip(&self.values) {
            s.push_str(&csv_field(m));
            for v in row {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

/// One mean per (method, task), keyed by method label and task name.
fn cells(results: &[RunResult]) -> Result<BTreeMap<(String, String), f64>, HarnessError> {
    let mut out = BTreeMap::new();
    for r in results {
        let key = (r.method.label(), r.task.clone());
        if out.insert(key.clone(), r.mean).is_some() {
            return Err(HarnessError::DuplicateCell {
                method: key.0,
                task: key.1,
            });
        }
    }
    Ok(out)
}

/// Builds the win-rate matrix over every method and task in `results`,
/// both in order of first appearance. Method `a` wins a task when its mean
/// exceeds `b`'s by more than `tie_threshold` percentage points (scores
/// are fractions in [0, 1]); gaps within 1e-9 points of the threshold
/// count as ties.
pub fn win_rate_matrix(results: &[RunResult], tie_threshold: f64) -> Result<WinRateMatrix, HarnessError> {
    let labels: Vec<String> = results.iter().map(|r| r.method.label()).collect();
    let methods = first_appearance(labels.iter().map(String::as_str));
    let tasks = first_appearance(results.iter().map(|r| r.task.as_str()));
    let cells = cells(results)?;
    let mean = |m: &str, t: &str| {
        cells
            .get(&(m.to_string(), t.to_string()))
            .copied()
            .ok_or_else(|| HarnessError::MissingCell {
                method: m.to_string(),
                task: t.to_string(),
            })
    };
    let mut values = vec![vec![0.5; methods.len()]; methods.len()];
    for (i, a) in methods.iter().enumerate() {
        for (j, b) in methods.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut points = 0.0;
            for t in &tasks {
                let gap = (mean(a, t)? - mean(b, t)?) * 100.0;
                if gap > tie_threshold + 1e-9 {
                    points += 1.0;
                } else if gap >= -tie_threshold - 1e-9 {
                    points += 0.5;
                }
            }
            values[i][j] = points / tasks.len() as f64;
        }
    }
    Ok(WinRateMatrix { methods, tasks, values })
}

fn file_stem(task: &str) -> String {
    task.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes `<task>.json` per task with that task's results, `summary.csv`
/// with one row per (method, task), and `win_rate.csv`. Returns the paths
/// written. Output depends only on `results`.
pub fn report(results: &[RunResult], out_dir: impl AsRef<Path>, tie_threshold: f64) -> Result<Vec<PathBuf>, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::Config("no results to report".into()));
    }
    let dir = out_dir.as_ref();
    let matrix = win_rate_matrix(results, tie_threshold)?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let write = |name: String, text: String| -> Result<PathBuf, HarnessError> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    };

    let mut written = Vec::new();
    for task in &matrix.tasks {
        let rows: Vec<&RunResult> = results.iter().filter(|r| &r.task == task).collect();
        written.push(write(format!("{}.json", file_stem(task)), pretty_json(&rows))?);
    }

    let mut csv = String::from("task,method,mean,std,seeds,budget_used\n");
    for task in &matrix.tasks {
        for method in &matrix.methods {
            let r = results
                .iter()
                .find(|r| &r.task == task && &r.method.label() == method)
                .expect("win_rate_matrix checked every cell");
            let _ = writeln!(
                csv,
                "{},{},{:.6},{:.6},{},{}",
                csv_field(task),
                csv_field(method),
                r.mean,
                r.std,
                r.per_seed_test_scores.len(),
                r.budget_used
            );
        }
    }
    written.push(write("summary.csv".into(), csv)?);
    written.push(write("win_rate.csv".into(), matrix.to_csv())?);
    Ok(written)
}
