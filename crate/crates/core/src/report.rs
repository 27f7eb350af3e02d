//! Markdown tables built from aggregated metrics.
//!
//! A [`Table`] keeps its rendered cell strings so the same values can be
//! written to JSON next to the markdown.

use serde::{Deserialize, Serialize};

use crate::evalcore::{AggregatedMetrics, MeanStd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let line = |cells: &[String]| format!("| {} |\n", cells.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&format!("**{}**\n\n", self.title));
        }
        out.push_str(&line(&self.header));
        let mut sep = vec![":--".to_string()];
        sep.extend(std::iter::repeat_n("--:".to_string(), self.header.len().saturating_sub(1)));
        out.push_str(&line(&sep));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

fn cell(m: Option<&MeanStd>) -> String {
    m.map_or_else(|| "n/a".into(), MeanStd::to_string)
}

fn metric_rows<'a>(columns: &[&'a AggregatedMetrics]) -> Vec<(&'static str, Vec<Option<&'a MeanStd>>)> {
    let mut rows = vec![
        ("Accuracy", columns.iter().map(|m| Some(&m.accuracy)).collect()),
        ("Precision", columns.iter().map(|m| Some(&m.macro_precision)).collect()),
        ("Recall", columns.iter().map(|m| Some(&m.macro_recall)).collect()),
        ("F1", columns.iter().map(|m| Some(&m.macro_f1)).collect::<Vec<_>>()),
    ];
    if columns.iter().any(|m| m.ari.is_some()) {
        rows.push(("ARI", columns.iter().map(|m| m.ari.as_ref()).collect()));
    }
    if columns.iter().any(|m| m.ami.is_some()) {
        rows.push(("AMI", columns.iter().map(|m| m.ami.as_ref()).collect()));
    }
    rows
}

/// Metrics down, one column per ablation.
pub fn ablation_table(title: &str, columns: &[(String, AggregatedMetrics)]) -> Table {
    let mut header = vec!["Metric".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    let metrics: Vec<&AggregatedMetrics> = columns.iter().map(|(_, m)| m).collect();
    let rows = metric_rows(&metrics)
        .into_iter()
        .map(|(name, vals)| std::iter::once(name.to_string()).chain(vals.into_iter().map(cell)).collect())
        .collect();
    Table { title: title.into(), header, rows }
}

/// One row per model, metrics across.
pub fn model_table(title: &str, rows: &[(String, AggregatedMetrics)]) -> Table {
    let metrics: Vec<&AggregatedMetrics> = rows.iter().map(|(_, m)| m).collect();
    let by_metric = metric_rows(&metrics);
    let mut header = vec!["Model".to_string()];
    header.extend(by_metric.iter().map(|(n, _)| n.to_string()));
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, (name, _))| std::iter::once(name.clone()).chain(by_metric.iter().map(|(_, v)| cell(v[i]))).collect())
        .collect();
    Table { title: title.into(), header, rows }
}
