//! `report`: collects the tables of every metrics file into `report.md`
//! and `report.json`. The JSON carries each table's cell strings and the
//! source metrics, so every rendered number can be traced back.

use std::fs;

use anyhow::{bail, Context as _, Result};
use serde::Serialize;
use serde_json::Value;

use cellsense::report::Table;

use crate::config::hex_sha256;
use crate::context::{Ctx, VERSION};

/// Section order; unknown commands sort last.
const ORDER: [&str; 9] =
    ["ingest", "knn-eval", "cluster-eval", "train-head", "train-fusion", "rerank", "marker-quiz", "marker-sim", "lime"];

#[derive(Serialize)]
struct Section {
    source: String,
    sha256: String,
    table: Table,
    metrics: Value,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    toolkit_version: &'a str,
    config_sha256: &'a str,
    sections: Vec<Section>,
}

fn rank(file: &str) -> usize {
    let command = file.split('.').next().unwrap_or_default();
    ORDER.iter().position(|c| *c == command).unwrap_or(ORDER.len())
}

pub fn report(ctx: &mut Ctx) -> Result<()> {
    let dir = ctx.path("metrics");
    let mut files: Vec<String> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        bail!("no metrics under {}; run an evaluation command first", dir.display());
    }
    files.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));

    let mut sections = Vec::new();
    for f in files {
        let bytes = fs::read(dir.join(&f))?;
        let metrics: Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing metrics/{f}"))?;
        let Some(table) = metrics.get("table") else { continue };
        let table: Table = serde_json::from_value(table.clone()).with_context(|| format!("table in metrics/{f}"))?;
        sections.push(Section { source: format!("metrics/{f}"), sha256: hex_sha256(&bytes), table, metrics });
    }

    let mut md = String::from("# Experiment report\n\n");
    md.push_str(&format!("Toolkit {VERSION}, config `{}`.\n", ctx.config_sha256));
    for s in &sections {
        md.push_str(&format!("\n{}\nSource: `{}`\n", s.table.to_markdown(), s.source));
    }
    let sha = ctx.config_sha256.clone();
    let json = ReportJson { toolkit_version: VERSION, config_sha256: &sha, sections };
    ctx.write_with("report.md", |w| Ok(w.write_all(md.as_bytes())?))?;
    ctx.write_json("report.json", &json)?;
    Ok(())
}
