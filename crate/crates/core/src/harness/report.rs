use std::fmt::Write as _;
use std::str::FromStr;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::record::{RunKind, RunRecord};
use super::HarnessError;
use crate::metrics::{round_half_up, CorpusReport, HallucinationPolicy, MacroValue};
use crate::prompting::DecodingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Model, F1, Accuracy, Precision, Recall.
    Table1,
    /// Model, cluster sizes and hallucination rate.
    Table3,
    /// One JSON summary per run.
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table1" => Ok(Self::Table1),
            "table3" => Ok(Self::Table3),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(HarnessError::Report(format!(
                "unknown format `{other}` (expected table1, table3 or jsonl)"
            ))),
        }
    }
}

/// Machine-readable per-run line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub label: String,
    pub kind: RunKind,
    pub params: DecodingParams,
    pub policy: HallucinationPolicy,
    pub failures: u64,
    pub report: Option<CorpusReport>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            run_id: r.manifest.run_id.clone(),
            label: r.manifest.label.clone(),
            kind: r.manifest.kind.clone(),
            params: r.manifest.params,
            policy: r.manifest.policy,
            failures: r.failures,
            report: r.report.clone(),
        }
    }
}

fn percent(v: &MacroValue, places: u32) -> String {
    let hundred = BigRational::from_integer(100.into());
    format!("{}%", round_half_up(&(&v.0 * hundred), places))
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<String>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header.iter().map(|h| h.to_string()).collect());
    line(widths.iter().map(|w| "-".repeat(*w)).collect());
    for row in rows {
        line(row);
    }
    out
}

/// Renders runs in the requested format. Runs with no scored samples show `-`.
pub fn render_report(runs: &[RunRecord], format: ReportFormat) -> Result<String, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let dash = |n: usize| vec!["-".to_string(); n];
    Ok(match format {
        ReportFormat::Table1 => table(
            &["Model", "F1", "Accuracy", "Precision", "Recall"],
            runs.iter()
                .map(|r| {
                    let mut row = vec![r.label().to_string()];
                    row.extend(match &r.report {
                        Some(c) => [&c.f1, &c.accuracy, &c.precision, &c.recall]
                            .iter()
                            .map(|v| v.round(2))
                            .collect(),
                        None => dash(4),
                    });
                    row
                })
                .collect(),
        ),
        ReportFormat::Table3 => table(
            &["Model", "Avg Cluster Size", "Filtered Cluster Size", "Hallucination Rate (%)"],
            runs.iter()
                .map(|r| {
                    let mut row = vec![r.label().to_string()];
                    row.extend(match &r.report {
                        Some(c) => vec![
                            c.mean_cluster_size.round(2),
                            c.mean_filtered_cluster_size.round(2),
                            percent(&c.hallucination_ratio, 1),
                        ],
                        None => dash(3),
                    });
                    row
                })
                .collect(),
        ),
        ReportFormat::Jsonl => {
            let mut out = String::new();
            for r in runs {
                let line = serde_json::to_string(&RunSummary::from(r))
                    .map_err(|e| HarnessError::Report(e.to_string()))?;
                out.push_str(&line);
                out.push('\n');
            }
            out
        }
    })
}

/// Parses output of the `Jsonl` format.
pub fn parse_machine_report(text: &str) -> Result<Vec<RunSummary>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Report(format!("line {}: {e}", i + 1)))
        })
        .collect()
}
