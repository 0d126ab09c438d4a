//! Result bundles and their aggregation into tables.
//!
//! A bundle is a directory holding `result.json` (a [`RunSummary`]) next to
//! the final netlist, metrics row and, for campaigns, the history log.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{CampaignResult, TerminationReason};
use crate::metrics::{MetricsRecord, CSV_COLUMNS};

pub const RESULT_FILE: &str = "result.json";
pub const FINAL_NETLIST_FILE: &str = "final.sp";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no result bundles under {0}")]
    Empty(PathBuf),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Campaign,
    Baseline { pattern: String },
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub kind: RunKind,
    pub seed: u64,
    pub reason: Option<TerminationReason>,
    #[serde(rename = "T")]
    pub t: usize,
    pub n_it: usize,
    pub l_t: usize,
    pub l_max: usize,
    pub inserted: Vec<String>,
    /// R_evade after each iteration.
    pub r_evade_series: Vec<f64>,
    pub metrics: MetricsRecord,
}

impl RunSummary {
    pub fn from_campaign(name: &str, result: &CampaignResult, metrics: MetricsRecord) -> Self {
        RunSummary {
            name: name.to_string(),
            kind: RunKind::Campaign,
            seed: result.seed,
            reason: Some(result.reason),
            t: result.t,
            n_it: result.n_it,
            l_t: result.l_t,
            l_max: result.l_max,
            inserted: result.inserted.clone(),
            r_evade_series: result.history.iter().map(|r| r.r_evade).collect(),
            metrics,
        }
    }

    /// Cross-field checks; returns a description of each violation.
    pub fn consistency_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.metrics.l_t != self.inserted.len() || self.l_t != self.inserted.len() {
            issues.push(format!("{}: L_T disagrees with the inserted-line list", self.name));
        }
        if self.kind == RunKind::Campaign && self.r_evade_series.len() != self.n_it {
            issues.push(format!("{}: R_evade series length differs from n_it", self.name));
        }
        if self.reason == Some(TerminationReason::ConsecutiveEvasion) {
            let tail = self.r_evade_series.iter().rev().take(self.t);
            if self.r_evade_series.len() < self.t || tail.clone().any(|r| *r < 100.0) {
                issues.push(format!("{}: stopped on consecutive evasion without {} trailing 100s", self.name, self.t));
            }
        }
        if self.l_t > self.l_max && self.kind == RunKind::Campaign {
            issues.push(format!("{}: L_T exceeds L_max", self.name));
        }
        issues
    }

    pub fn label(&self) -> String {
        match &self.kind {
            RunKind::Campaign => self.name.clone(),
            RunKind::Baseline { pattern } => format!("{} [{pattern}]", self.name),
        }
    }
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<(), ReportError> {
    let path = dir.join(RESULT_FILE);
    let mut text = serde_json::to_string_pretty(summary).map_err(|source| ReportError::Json {
        path: path.clone(),
        source,
    })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| ReportError::Io { path, source })
}

pub fn read_summary(path: &Path) -> Result<RunSummary, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Every `result.json` at or below `root`, in path order.
pub fn load_bundles(root: &Path) -> Result<Vec<RunSummary>, ReportError> {
    let mut found = Vec::new();
    collect(root, &mut found)?;
    found.sort();
    if found.is_empty() {
        return Err(ReportError::Empty(root.to_path_buf()));
    }
    found.iter().map(|p| read_summary(p)).collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path.file_name().is_some_and(|f| f == RESULT_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Per-run rows plus column means.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<MetricsRecord>,
    pub labels: Vec<String>,
    /// Mean of each numeric column, in [`CSV_COLUMNS`] order from `n_it`.
    pub average: [f64; 9],
    pub series: Vec<(String, Vec<f64>)>,
    pub issues: Vec<String>,
}

fn numeric(r: &MetricsRecord) -> [f64; 9] {
    [
        r.n_it as f64,
        r.l_t as f64,
        r.r_evade,
        r.node_impact,
        r.activation_range,
        r.delta_p,
        r.delta_a,
        r.epsilon_impact,
        r.epsilon_activation,
    ]
}

/// Mean over the finite entries of each column; NaN cells (undefined
/// `delta_p`) are skipped rather than poisoning the average.
fn column_means(rows: &[MetricsRecord]) -> [f64; 9] {
    let mut avg = [f64::NAN; 9];
    for (c, slot) in avg.iter_mut().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| numeric(r)[c]).filter(|v| v.is_finite()).collect();
        if !vals.is_empty() {
            *slot = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    avg
}

pub fn aggregate(runs: &[RunSummary]) -> Report {
    let rows: Vec<MetricsRecord> = runs.iter().map(|r| r.metrics.clone()).collect();
    Report {
        average: column_means(&rows),
        labels: runs.iter().map(RunSummary::label).collect(),
        series: runs
            .iter()
            .filter(|r| r.kind == RunKind::Campaign)
            .map(|r| (r.label(), r.r_evade_series.clone()))
            .collect(),
        issues: runs.iter().flat_map(RunSummary::consistency_issues).collect(),
        rows,
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

impl Report {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for (label, r) in self.labels.iter().zip(&self.rows) {
            let mut rec = vec![label.clone(), r.trojan_types.clone()];
            rec.extend(numeric(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let mut avg = vec!["Average".to_string(), "-".to_string()];
        avg.extend(self.average.iter().map(|v| v.to_string()));
        w.write_record(&avg)?;
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![CSV_COLUMNS.iter().map(|s| s.to_string()).collect()];
        for (label, r) in self.labels.iter().zip(&self.rows) {
            let mut row = vec![label.clone(), r.trojan_types.clone()];
            row.extend(numeric(r).iter().map(|v| fmt_num(*v)));
            cells.push(row);
        }
        let mut avg = vec!["Average".to_string(), "-".to_string()];
        avg.extend(self.average.iter().map(|v| fmt_num(*v)));
        cells.push(avg);
        let widths: Vec<usize> = (0..CSV_COLUMNS.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 || i + 2 == cells.len() {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }

    /// Long-format `run,iteration,r_evade` rows for convergence plots.
    pub fn write_series<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "iteration", "r_evade"])?;
        for (label, series) in &self.series {
            for (i, r) in series.iter().enumerate() {
                w.write_record([label.clone(), (i + 1).to_string(), r.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
