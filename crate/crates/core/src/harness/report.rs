//! Self-contained experiment reports: JSON for re-plotting, CSV for tables,
//! and a merge operation over runs keyed by (task, method, seed).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::InferenceRecord;
use crate::train::TrainLogRecord;

/// One comparison row. Methods that were skipped (e.g. Viterbi on a
/// non-chain energy) keep their row with empty measurements and a note.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub steps: usize,
    #[serde(default)]
    pub oracle: bool,
    pub metric: Option<f64>,
    pub energy_relaxed: Option<f64>,
    pub energy_discrete: Option<f64>,
    pub search_error: Option<f64>,
    pub examples_per_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MethodRow {
    pub fn skipped(method: &str, note: impl Into<String>) -> Self {
        MethodRow {
            method: method.to_string(),
            steps: 0,
            oracle: false,
            metric: None,
            energy_relaxed: None,
            energy_discrete: None,
            search_error: None,
            examples_per_sec: None,
            note: Some(note.into()),
        }
    }

    fn csv_method(&self) -> String {
        if self.oracle {
            format!("{}-oracle", self.method)
        } else {
            self.method.clone()
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// A full single-run report; self-contained (config echo included) so it can
/// be re-plotted without rerunning.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub methods: Vec<MethodRow>,
    /// Per-instance records keyed by the method row's CSV name.
    #[serde(default)]
    pub instances: BTreeMap<String, Vec<InferenceRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_log: Option<Vec<TrainLogRecord>>,
    #[serde(default)]
    pub dataset: serde_json::Value,
}

impl ExperimentReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: not a report file: {e}", path.display())))
    }

    /// The tabular view with the exact column contract.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,steps,metric,energy_relaxed,energy_discrete,search_error,examples_per_sec\n");
        for row in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.csv_method(),
                row.steps,
                fmt_opt(row.metric),
                fmt_opt(row.energy_relaxed),
                fmt_opt(row.energy_discrete),
                fmt_opt(row.search_error),
                fmt_opt(row.examples_per_sec),
            ));
        }
        out
    }
}

/// One row of a merged multi-run table.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MergedRow {
    pub task: String,
    pub method: String,
    pub steps: usize,
    pub seed: u64,
    pub metric: Option<f64>,
    pub energy_relaxed: Option<f64>,
    pub energy_discrete: Option<f64>,
    pub search_error: Option<f64>,
    pub examples_per_sec: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MergedReport {
    pub rows: Vec<MergedRow>,
}

/// Merge single-run reports and/or previously merged tables into one table
/// keyed by (task, method, steps, seed). Re-merging a merged file is the
/// identity. Files with neither shape are rejected by name.
pub fn merge_reports(paths: &[std::path::PathBuf]) -> Result<MergedReport> {
    if paths.is_empty() {
        return Err(Error::invalid("report merge needs at least one input file"));
    }
    let mut keyed: BTreeMap<(String, String, usize, u64), MergedRow> = BTreeMap::new();
    for path in paths {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: not JSON: {e}", path.display())))?;
        if value.get("methods").is_some() {
            let report: ExperimentReport = serde_json::from_value(value).map_err(|e| {
                Error::Format(format!("{}: malformed report: {e}", path.display()))
            })?;
            for m in &report.methods {
                if m.note.is_some() && m.metric.is_none() {
                    continue; // skipped rows do not merge
                }
                let row = MergedRow {
                    task: report.task.clone(),
                    method: m.csv_method(),
                    steps: m.steps,
                    seed: report.seed,
                    metric: m.metric,
                    energy_relaxed: m.energy_relaxed,
                    energy_discrete: m.energy_discrete,
                    search_error: m.search_error,
                    examples_per_sec: m.examples_per_sec,
                };
                keyed.insert((row.task.clone(), row.method.clone(), row.steps, row.seed), row);
            }
        } else if value.get("rows").is_some() {
            let merged: MergedReport = serde_json::from_value(value).map_err(|e| {
                Error::Format(format!("{}: malformed merged table: {e}", path.display()))
            })?;
            for row in merged.rows {
                keyed.insert((row.task.clone(), row.method.clone(), row.steps, row.seed), row);
            }
        } else {
            return Err(Error::Format(format!(
                "{}: neither a report (missing \"methods\") nor a merged table (missing \"rows\")",
                path.display()
            )));
        }
    }
    Ok(MergedReport { rows: keyed.into_values().collect() })
}

/// CSV view of a merged table: one section per task, per-seed rows plus
/// mean/std columns over seeds within each (method, steps) group.
pub fn write_merged_csv(merged: &MergedReport) -> String {
    let mut out = String::new();
    let mut tasks: Vec<&str> = merged.rows.iter().map(|r| r.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    for task in tasks {
        out.push_str(&format!("# task: {task}\n"));
        out.push_str("method,steps,seed,metric,energy_relaxed,energy_discrete,search_error,examples_per_sec,metric_mean,metric_std\n");
        let rows: Vec<&MergedRow> = merged.rows.iter().filter(|r| r.task == task).collect();
        // Group stats over seeds.
        let mut stats: BTreeMap<(String, usize), (f64, f64, usize)> = BTreeMap::new();
        for r in &rows {
            if let Some(m) = r.metric {
                let e = stats.entry((r.method.clone(), r.steps)).or_insert((0.0, 0.0, 0));
                e.0 += m;
                e.1 += m * m;
                e.2 += 1;
            }
        }
        for r in &rows {
            let (mean, std) = match stats.get(&(r.method.clone(), r.steps)) {
                Some((s, s2, n)) if *n > 0 => {
                    let mean = s / *n as f64;
                    let var = (s2 / *n as f64 - mean * mean).max(0.0);
                    (Some(mean), Some(var.sqrt()))
                }
                _ => (None, None),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.steps,
                r.seed,
                fmt_opt(r.metric),
                fmt_opt(r.energy_relaxed),
                fmt_opt(r.energy_discrete),
                fmt_opt(r.search_error),
                fmt_opt(r.examples_per_sec),
                fmt_opt(mean),
                fmt_opt(std),
            ));
        }
    }
    out
}
