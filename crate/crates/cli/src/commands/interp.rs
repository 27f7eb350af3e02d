//! `lime` and `marker-sim`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context as _, Result};
use serde::Serialize;

use cellsense::corpus::Split;
use cellsense::fusion::MlpModel;
use cellsense::interpret::{
    aggregate_attributions, lime_attribution, marker_overlap, marker_similarity_table, read_attributions,
    write_attributions, AttributionRecord, EmbeddingClassifier, InterpretError, LimeConfig, OverlapReport,
    SimilarityTable, TypeSignature,
};
use cellsense::report::Table;

use super::train::head_checkpoint;
use crate::context::{file_stem, Ctx};

#[derive(Serialize)]
struct Skipped {
    cell_id: String,
    reason: String,
}

#[derive(Serialize)]
struct LimeOutput {
    provider: String,
    checkpoint_sha256: String,
    config: LimeConfig,
    cells: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    skipped: Vec<Skipped>,
    signatures: Vec<TypeSignature>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlap: Option<OverlapReport>,
    table: Table,
}

fn signature_table(sigs: &[TypeSignature]) -> Table {
    Table {
        title: "Top attributed genes".into(),
        header: vec!["Cell type".into(), "Method".into(), "Genes".into()],
        rows: sigs
            .iter()
            .map(|s| vec![s.class.clone(), s.method.clone(), s.gene_names().collect::<Vec<_>>().join(", ")])
            .collect(),
    }
}

fn overlap_table(o: &OverlapReport) -> Table {
    let mut header = vec!["Cell type".to_string()];
    header.extend(o.methods.iter().map(|m| format!("{m} top genes")));
    header.push("Shared markers".into());
    let rows = o
        .types
        .iter()
        .map(|t| {
            let mut row = vec![t.cell_type.clone()];
            for m in &o.methods {
                row.push(t.top_genes.get(m).map(|g| g.join(", ")).unwrap_or_default());
            }
            row.push(t.shared.join(", "));
            row
        })
        .collect();
    Table { title: "Attributed genes versus known markers".into(), header, rows }
}

/// LIME on the checkpointed classifier head for the first
/// `interpret.cells_per_type` test cells (by cell id) of each type, scored
/// toward the true type. External attribution files join the summary.
pub fn lime(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let ckpt = ctx.path(&head_checkpoint(&name));
    if !ckpt.exists() {
        bail!("{} not found; run train-head first", ckpt.display());
    }
    let model = MlpModel::load(BufReader::new(File::open(&ckpt)?))?;
    let ds = ctx.dataset()?;
    let sentences = ctx.sentences(&ds);

    let mut per_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in ds.indices(Split::Test) {
        per_type.entry(ds.cells[i].label.as_str()).or_default().push(i);
    }
    let cap = ctx.cfg.interpret.cells_per_type;
    let chosen: Vec<usize> = per_type
        .into_values()
        .flat_map(|mut v| {
            v.sort_by(|&a, &b| ds.cells[a].cell_id.cmp(&ds.cells[b].cell_id));
            v.truncate(cap);
            v
        })
        .collect();

    let scorer = EmbeddingClassifier { provider: &provider, model: &model, exec: ctx.exec };
    let cfg = ctx.cfg.interpret.lime.clone();
    let mut records = Vec::with_capacity(chosen.len());
    let mut skipped = Vec::new();
    for &i in &chosen {
        match lime_attribution(&sentences[i], &ds.cells[i].label, &scorer, &cfg) {
            Ok(r) => records.push(r),
            Err(e @ (InterpretError::TooFewFeatures(_) | InterpretError::DuplicateGene(_) | InterpretError::Singular)) => {
                log::warn!("cell {}: {e}; skipped", ds.cells[i].cell_id);
                skipped.push(Skipped { cell_id: ds.cells[i].cell_id.clone(), reason: e.to_string() });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let stem = file_stem(&name);
    ctx.write_with(&format!("interpret/lime.{stem}.jsonl"), |w| Ok(write_attributions(w, &records)?))?;

    let known: HashSet<String> = ds.cells.iter().map(|c| c.cell_id.clone()).collect();
    let mut by_method: BTreeMap<String, Vec<AttributionRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method.clone()).or_default().push(r);
    }
    for p in ctx.cfg.interpret.external.clone() {
        let f = File::open(ctx.resolve(&p)).with_context(|| format!("opening {}", p.display()))?;
        for r in read_attributions(BufReader::new(f), Some(&known)).with_context(|| format!("reading {}", p.display()))? {
            by_method.entry(r.method.clone()).or_default().push(r);
        }
    }
    let mut signatures = Vec::new();
    for recs in by_method.values() {
        signatures.extend(aggregate_attributions(recs, cap)?);
    }
    let overlap = match ctx.cfg.markers {
        Some(_) => Some(marker_overlap(&signatures, &ctx.markers()?.0)?),
        None => None,
    };
    let table = overlap.as_ref().map_or_else(|| signature_table(&signatures), overlap_table);
    let out = LimeOutput {
        provider: name,
        checkpoint_sha256: model.checksum(),
        config: cfg,
        cells: chosen.len(),
        skipped,
        signatures,
        overlap,
        table,
    };
    ctx.write_json(&format!("metrics/lime.{stem}.json"), &out)?;
    Ok(())
}

#[derive(Serialize)]
struct MarkerSimOutput {
    provider: String,
    model_id: String,
    similarity: SimilarityTable,
    table: Table,
}

/// Cosine similarity of each type's top marker to its own and to other
/// types' markers, embedded as bare gene names.
pub fn marker_sim(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let (db, types) = ctx.markers()?;
    let types = match types {
        Some(t) => t,
        None => ctx.dataset()?.label_set,
    };
    let sim = marker_similarity_table(&db, &types, |texts| provider.embed_bare(texts))?;
    let f = |x: f64| format!("{x:.3}");
    let mut rows: Vec<Vec<String>> = sim
        .rows
        .iter()
        .map(|r| vec![r.cell_type.clone(), r.top_marker.clone(), r.n_markers.to_string(), f(r.intra), f(r.inter)])
        .collect();
    rows.push(vec!["All types".into(), String::new(), String::new(), f(sim.intra), f(sim.inter)]);
    let table = Table {
        title: format!("Marker embedding similarity ({name})"),
        header: ["Cell type", "Top marker", "Markers", "Intra-type", "Inter-type"].map(String::from).to_vec(),
        rows,
    };
    let out = MarkerSimOutput { model_id: provider.config().model_id.clone(), provider: name.clone(), similarity: sim, table };
    ctx.write_json(&format!("metrics/marker-sim.{}.json", file_stem(&name)), &out)?;
    Ok(())
}
