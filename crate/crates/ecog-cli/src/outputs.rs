//! Result files: confusion-matrix CSVs and the aggregated summary JSON.
//!
//! Confusion CSV layout: a header `actual\predicted,class_1..class_n,precision`,
//! one row per actual class with raw counts and the row statistic, then a
//! `sensitivity` row and a final `overall_DA` row. Undefined statistics
//! (empty rows/columns) are written as `NA`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ecog_core::dataset::Condition;
use ecog_core::eval::{AggregateReport, ConfusionReport};

use crate::config::Method;

pub fn confusion_csv(report: &ConfusionReport) -> String {
    let n = report.n_classes;
    let mut out = String::from("actual\\predicted");
    for c in 1..=n {
        out.push_str(&format!(",class_{c}"));
    }
    out.push_str(",precision\n");
    for r in 1..=n {
        out.push_str(&format!("class_{r}"));
        for c in 1..=n {
            out.push_str(&format!(",{}", report.counts[r as usize - 1][c as usize - 1]));
        }
        match report.precision(r) {
            Some(p) => out.push_str(&format!(",{p}\n")),
            None => out.push_str(",NA\n"),
        }
    }
    out.push_str("sensitivity");
    for c in 1..=n {
        match report.sensitivity(c) {
            Some(s) => out.push_str(&format!(",{s}")),
            None => out.push_str(",NA"),
        }
    }
    out.push_str(",\n");
    out.push_str(&format!("overall_DA,{}\n", report.overall_da()));
    out
}

/// Parse a confusion CSV written by [`confusion_csv`] back into counts.
pub fn parse_confusion_csv(text: &str) -> Result<ConfusionReport, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let n_classes = header.split(',').count().checked_sub(2).ok_or("bad header")?;
    if n_classes == 0 || !header.starts_with("actual\\predicted") {
        return Err(format!("unrecognized header: {header}"));
    }
    let mut counts = Vec::with_capacity(n_classes);
    for r in 1..=n_classes {
        let line = lines.next().ok_or_else(|| format!("missing row {r}"))?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_classes + 2 || cells[0] != format!("class_{r}") {
            return Err(format!("malformed row: {line}"));
        }
        let row: Result<Vec<u64>, _> = cells[1..=n_classes]
            .iter()
            .map(|c| c.parse::<u64>().map_err(|e| format!("bad count '{c}': {e}")))
            .collect();
        counts.push(row?);
    }
    Ok(ConfusionReport {
        n_classes: n_classes as u8,
        counts,
    })
}

pub fn confusion_file_name(day_id: u32, method: Method) -> String {
    format!("confusion_day{day_id:02}_{method}.csv")
}

/// Parse `confusion_dayNN_method.csv` names.
pub fn parse_confusion_file_name(name: &str) -> Option<(u32, Method)> {
    let rest = name.strip_prefix("confusion_day")?.strip_suffix(".csv")?;
    let (day, method) = rest.split_once('_')?;
    let day_id: u32 = day.parse().ok()?;
    let method = Method::parse_list(method).ok()?.into_iter().next()?;
    Some((day_id, method))
}

/// Per-day outcome of one method, as serialized into the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayEntry {
    pub day_id: u32,
    pub n_test: u64,
    pub da: f64,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledView {
    pub counts: Vec<Vec<u64>>,
    pub overall_da: f64,
    pub per_class_da: Vec<f64>,
    pub precision: Vec<Option<f64>>,
    pub sensitivity: Vec<Option<f64>>,
}

impl PooledView {
    pub fn from_report(rep: &ConfusionReport) -> Self {
        let classes: Vec<u8> = (1..=rep.n_classes).collect();
        PooledView {
            counts: rep.counts.clone(),
            overall_da: rep.overall_da(),
            per_class_da: classes.iter().map(|&c| rep.per_class_da(c)).collect(),
            precision: classes.iter().map(|&c| rep.precision(c)).collect(),
            sensitivity: classes.iter().map(|&c| rep.sensitivity(c)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub day_id: u32,
    pub method: Option<String>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayInfo {
    pub day_id: u32,
    pub condition: Option<Condition>,
}

/// The aggregated experiment summary (`summary.json`). Field and map
/// ordering is fixed so identical runs serialize to identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub classes: u8,
    pub seed: u64,
    pub chance_level: f64,
    pub methods: Vec<String>,
    pub days: Vec<DayInfo>,
    pub results: std::collections::BTreeMap<String, Vec<DayEntry>>,
    pub pooled: std::collections::BTreeMap<String, PooledView>,
    pub aggregate: AggregateReport,
    pub errors: Vec<ErrorEntry>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}
