//! Corpus preparation: `ingest`, `sentences`, `ablate`, `embed`.

use std::collections::BTreeMap;

use anyhow::Result;
use serde::Serialize;

use cellsense::ablate::in_context_count;
use cellsense::corpus::synth::{marker_gene, type_label};
use cellsense::corpus::{write_sparse_jsonl, write_split, CellSentence, Split};
use cellsense::report::Table;

use crate::context::{file_stem, Ctx};

#[derive(Serialize)]
struct LabelCounts {
    train: usize,
    test: usize,
}

#[derive(Serialize)]
struct IngestSummary {
    n_cells: usize,
    n_genes: usize,
    empty_sentences: usize,
    labels: BTreeMap<String, LabelCounts>,
    table: Table,
}

pub fn ingest(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    ctx.write_with("data/cells.jsonl", |w| Ok(write_sparse_jsonl(&ds, w)?))?;
    ctx.write_json("data/vocabulary.json", &serde_json::json!({ "genes": ds.vocabulary.genes() }))?;
    ctx.write_with("data/split.json", |w| Ok(write_split(&ds, w)?))?;

    if let Some(s) = ctx.cfg.data.synthetic.clone() {
        // The generator's planted markers, usable as a marker database.
        ctx.write_with("data/markers.tsv", |w| {
            writeln!(w, "cell_type\tgene\trank")?;
            for t in 0..s.n_types {
                for j in 0..s.markers_per_type {
                    writeln!(w, "{}\t{}\t{}", type_label(t), marker_gene(t, j, s.markers_per_type), j + 1)?;
                }
            }
            Ok(())
        })?;
    }

    let split = ds.split.as_ref().expect("dataset() applies a split");
    let mut labels: BTreeMap<String, LabelCounts> = BTreeMap::new();
    for (c, s) in ds.cells.iter().zip(split) {
        let e = labels.entry(c.label.clone()).or_insert(LabelCounts { train: 0, test: 0 });
        match s {
            Split::Train => e.train += 1,
            Split::Test => e.test += 1,
        }
    }
    let table = Table {
        title: "Dataset".into(),
        header: vec!["Cell type".into(), "Train".into(), "Test".into()],
        rows: labels.iter().map(|(l, c)| vec![l.clone(), c.train.to_string(), c.test.to_string()]).collect(),
    };
    let empty_sentences = ctx.sentences(&ds).iter().filter(|s| s.is_empty()).count();
    let summary = IngestSummary { n_cells: ds.len(), n_genes: ds.vocabulary.len(), empty_sentences, labels, table };
    ctx.write_json("metrics/ingest.json", &summary)?;
    Ok(())
}

/// Every configured ablation applied with the first eval seed.
fn variants(ctx: &Ctx, base: &[CellSentence]) -> Result<Vec<Vec<CellSentence>>> {
    let seed = ctx.cfg.eval.seeds[0];
    ctx.ablations()
        .iter()
        .map(|spec| Ok(ctx.ablator(Ctx::seeded(spec, seed))?.apply_corpus(base, ctx.exec)?))
        .collect()
}

fn variant_file(sentences: &[CellSentence]) -> String {
    sentences.first().map_or_else(|| "empty".into(), |s| file_stem(s.variant.as_str()))
}

#[derive(Serialize)]
struct SentenceRow<'a> {
    cell_id: &'a str,
    variant: &'a str,
    text: String,
}

/// Rendered input text per cell and variant, as an external encoder sees it.
pub fn sentences(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let ds = ctx.dataset()?;
    let base = ctx.sentences(&ds);
    for v in variants(ctx, &base)? {
        let rows: Vec<SentenceRow> = v
            .iter()
            .map(|s| SentenceRow { cell_id: &s.cell_id, variant: s.variant.as_str(), text: provider.render(s) })
            .collect();
        ctx.write_jsonl(&format!("sentences/{}/{}.jsonl", file_stem(&name), variant_file(&v)), &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct VariantStats {
    variant: String,
    column: String,
    mean_length: f64,
    mean_in_context: f64,
}

pub fn ablate(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let base = ctx.sentences(&ds);
    let specs = ctx.ablations();
    let mut stats = Vec::with_capacity(specs.len());
    for (spec, v) in specs.iter().zip(variants(ctx, &base)?) {
        let n = v.len().max(1) as f64;
        stats.push(VariantStats {
            variant: v.first().map(|s| s.variant.to_string()).unwrap_or_default(),
            column: spec.kind.display_name(),
            mean_length: v.iter().map(|s| s.len() as f64).sum::<f64>() / n,
            mean_in_context: v.iter().map(|s| in_context_count(s, &spec.budget) as f64).sum::<f64>() / n,
        });
        ctx.write_jsonl(&format!("ablations/{}.jsonl", variant_file(&v)), &v)?;
    }
    ctx.write_json("metrics/ablate.json", &serde_json::json!({ "variants": stats }))?;
    Ok(())
}

/// Fills the provider cache for every variant and eval seed.
pub fn embed(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let ds = ctx.dataset()?;
    let base = ctx.sentences(&ds);
    let mut variants = Vec::new();
    for spec in ctx.ablations() {
        for &seed in &ctx.cfg.eval.seeds {
            let v = ctx.ablator(Ctx::seeded(&spec, seed))?.apply_corpus(&base, ctx.exec)?;
            let id = v.first().map(|s| s.variant.to_string()).unwrap_or_default();
            if variants.contains(&id) {
                continue;
            }
            provider.embed_batch(&v)?;
            provider.flush()?;
            variants.push(id);
        }
    }
    ctx.note("remote_calls", provider.remote_calls());
    if let Some(store) = &provider.config().store {
        if let Ok(rel) = store.strip_prefix(&ctx.out) {
            let rel = rel.to_string_lossy().into_owned();
            if ctx.path(&rel).exists() {
                ctx.track(&rel)?;
            }
        }
    }
    let summary = serde_json::json!({
        "provider": name,
        "model_id": provider.config().model_id,
        "dim": provider.dim(),
        "cells": ds.len(),
        "variants": variants,
    });
    ctx.write_json(&format!("metrics/embed.{}.json", file_stem(&name)), &summary)?;
    Ok(())
}
