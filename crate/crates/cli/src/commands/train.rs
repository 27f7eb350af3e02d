//! `train-head` and `train-fusion`.

use anyhow::{Context as _, Result};
use serde::Serialize;

use cellsense::embed::EmbeddingVector;
use cellsense::evalcore::{aggregate_runs, macro_metrics, AggregatedMetrics, MetricsReport};
use cellsense::fusion::{grid_search, predict_batch, train_head as fit_head, write_trace, GridPointResult, HeadConfig, TrainConfig};
use cellsense::pipeline::{embed_split, SplitEmbeddings};
use cellsense::report::{model_table, Table};

use crate::context::{file_stem, Ctx};

pub fn rows(v: &[EmbeddingVector]) -> Vec<Vec<f64>> {
    v.iter().map(|e| e.as_slice().to_vec()).collect()
}

fn score(truth: &[String], predicted: &[String]) -> Result<MetricsReport> {
    Ok(MetricsReport::from(&macro_metrics(truth, predicted)?))
}

fn baseline_split(ctx: &Ctx, name: &str) -> Result<SplitEmbeddings> {
    let provider = ctx.provider(name)?;
    let ds = ctx.dataset()?;
    let emb = embed_split(&ds, &ctx.sentences(&ds), &provider)?;
    provider.flush()?;
    Ok(emb)
}

pub fn head_checkpoint(provider: &str) -> String {
    format!("models/head.{}.json", file_stem(provider))
}

#[derive(Serialize)]
struct HeadOutput {
    provider: String,
    config: HeadConfig,
    seeds: Vec<u64>,
    checkpoint_sha256: String,
    metrics: AggregatedMetrics,
    table: Table,
}

/// Single-hidden-layer classifier on frozen embeddings, one fit per eval
/// seed; the first seed's model is checkpointed.
pub fn train_head(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let emb = baseline_split(ctx, &name)?;
    let (train, test) = (rows(&emb.train), rows(&emb.test));
    let seeds = ctx.cfg.eval.seeds.clone();
    let mut runs = Vec::new();
    let mut checkpoint = None;
    for &seed in &seeds {
        let cfg = HeadConfig { seed, ..ctx.cfg.head };
        let fit = fit_head(&train, &emb.train_labels, &cfg, ctx.exec)?;
        let pred = predict_batch(&fit.model, &[&test], ctx.exec);
        runs.push(score(&emb.test_labels, &pred)?);
        checkpoint.get_or_insert(fit);
    }
    let fit = checkpoint.context("no eval seeds")?;
    let stem = file_stem(&name);
    ctx.write_with(&head_checkpoint(&name), |w| Ok(fit.model.save(w)?))?;
    ctx.write_with(&format!("models/head.{stem}.trace.csv"), |w| Ok(write_trace(w, &fit.trace)?))?;
    let metrics = aggregate_runs(&runs)?;
    let table = model_table("Classifier head", &[(name.clone(), metrics.clone())]);
    let out = HeadOutput {
        provider: name,
        config: ctx.cfg.head,
        seeds,
        checkpoint_sha256: fit.model.checksum(),
        metrics,
        table,
    };
    ctx.write_json(&format!("metrics/train-head.{stem}.json"), &out)?;
    Ok(())
}

#[derive(Serialize)]
struct FusionRun {
    seed: u64,
    best: TrainConfig,
    grid: Vec<GridPointResult>,
}

#[derive(Serialize)]
struct FusionOutput {
    modalities: [String; 2],
    runs: Vec<FusionRun>,
    checkpoint_sha256: String,
    metrics: AggregatedMetrics,
    table: Table,
}

/// Two-branch network over the configured modality pair. Each eval seed
/// runs its own grid search on a validation split of the training cells.
pub fn train_fusion(ctx: &mut Ctx) -> Result<()> {
    let f = ctx.cfg.fusion.clone().context("config has no fusion section")?;
    let [a_name, b_name] = &f.modalities;
    let a = baseline_split(ctx, a_name)?;
    let b = baseline_split(ctx, b_name)?;
    anyhow::ensure!(a.train_ids == b.train_ids && a.test_ids == b.test_ids, "modalities disagree on cell order");
    let (a_train, b_train, a_test, b_test) = (rows(&a.train), rows(&b.train), rows(&a.test), rows(&b.test));

    let mut runs = Vec::new();
    let mut reports = Vec::new();
    let mut checkpoint = None;
    for &seed in &ctx.cfg.eval.seeds {
        let base = TrainConfig { seed, ..f.base };
        let outcome = grid_search(&f.grid, &[&a_train, &b_train], &a.train_labels, &base, ctx.exec)?;
        let pred = predict_batch(&outcome.model.model, &[&a_test, &b_test], ctx.exec);
        reports.push(score(&a.test_labels, &pred)?);
        runs.push(FusionRun { seed, best: outcome.best, grid: outcome.points });
        checkpoint.get_or_insert(outcome.model);
    }
    let fit = checkpoint.context("no eval seeds")?;
    let stem = format!("{}+{}", file_stem(a_name), file_stem(b_name));
    ctx.write_with(&format!("models/fusion.{stem}.json"), |w| Ok(fit.model.save(w)?))?;
    ctx.write_with(&format!("models/fusion.{stem}.trace.csv"), |w| Ok(write_trace(w, &fit.trace)?))?;
    let metrics = aggregate_runs(&reports)?;
    let table = model_table("Fusion", &[(format!("{a_name} + {b_name}"), metrics.clone())]);
    let out = FusionOutput { modalities: f.modalities.clone(), runs, checkpoint_sha256: fit.model.checksum(), metrics, table };
    ctx.write_json(&format!("metrics/train-fusion.{stem}.json"), &out)?;
    Ok(())
}
