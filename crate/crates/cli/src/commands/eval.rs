//! `knn-eval` and `cluster-eval`.

use anyhow::{bail, Result};
use serde::Serialize;

use cellsense::ablate::AblationSpec;
use cellsense::evalcore::{aggregate_runs, AggregatedMetrics, MeanStd, MetricsReport};
use cellsense::pipeline::{cluster_evaluate, embed_split, knn_evaluate, Prediction};
use cellsense::report::{ablation_table, Table};

use crate::context::{file_stem, Ctx};

#[derive(Serialize)]
struct Column {
    column: String,
    ablation: AblationSpec,
    metrics: AggregatedMetrics,
}

#[derive(Serialize)]
struct Failure {
    column: String,
    error: String,
}

#[derive(Serialize)]
struct KnnEvalOutput {
    provider: String,
    model_id: String,
    k: usize,
    seeds: Vec<u64>,
    columns: Vec<Column>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failed: Vec<Failure>,
    table: Table,
}

/// k-NN on the test split plus k-means (ARI/AMI) on the test embeddings,
/// for every ablation and eval seed. A failing ablation does not discard
/// the others; the command still exits nonzero.
pub fn knn_eval(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let ds = ctx.dataset()?;
    let base = ctx.sentences(&ds);
    let (k, seeds) = (ctx.cfg.eval.k, ctx.cfg.eval.seeds.clone());

    let mut columns = Vec::new();
    let mut failed = Vec::new();
    let mut baseline_predictions: Option<Vec<Prediction>> = None;
    for spec in ctx.ablations() {
        let column = spec.kind.display_name();
        let result = (|| -> Result<AggregatedMetrics> {
            let mut runs = Vec::with_capacity(seeds.len());
            for &s in &seeds {
                let ablated = ctx.ablator(Ctx::seeded(&spec, s))?.apply_corpus(&base, ctx.exec)?;
                let emb = embed_split(&ds, &ablated, &provider)?;
                let run = knn_evaluate(&emb, k, ctx.exec)?;
                let (ari, ami) = cluster_evaluate(&emb.test, &emb.test_labels, s, ctx.exec)?;
                if baseline_predictions.is_none() && spec.kind.name() == "identity" {
                    baseline_predictions = Some(run.predictions);
                }
                runs.push(MetricsReport { ari: Some(ari), ami: Some(ami), ..run.report });
            }
            Ok(aggregate_runs(&runs)?)
        })();
        provider.flush()?;
        match result {
            Ok(metrics) => columns.push(Column { column, ablation: spec, metrics }),
            Err(e) => {
                log::error!("{column}: {e:#}");
                failed.push(Failure { column, error: format!("{e:#}") });
            }
        }
    }

    let stem = file_stem(&name);
    if let Some(p) = &baseline_predictions {
        ctx.write_jsonl(&format!("knn-eval/{stem}/predictions.jsonl"), p)?;
    }
    let cols: Vec<(String, AggregatedMetrics)> = columns.iter().map(|c| (c.column.clone(), c.metrics.clone())).collect();
    let table = ablation_table(&format!("Ablation results ({name}, k = {k})"), &cols);
    let out = KnnEvalOutput {
        model_id: provider.config().model_id.clone(),
        provider: name,
        k,
        seeds,
        columns,
        failed,
        table,
    };
    ctx.write_json(&format!("metrics/knn-eval.{stem}.json"), &out)?;
    if !out.failed.is_empty() {
        bail!("{} of {} ablations failed", out.failed.len(), out.failed.len() + out.columns.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct ClusterRun {
    seed: u64,
    ari: f64,
    ami: f64,
}

#[derive(Serialize)]
struct ClusterOutput {
    provider: String,
    model_id: String,
    n_cells: usize,
    runs: Vec<ClusterRun>,
    ari: MeanStd,
    ami: MeanStd,
    table: Table,
}

/// k-means over every cell's baseline embedding, one cluster per label.
pub fn cluster_eval(ctx: &mut Ctx) -> Result<()> {
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let ds = ctx.dataset()?;
    let vectors = provider.embed_batch(&ctx.sentences(&ds))?;
    provider.flush()?;
    let labels: Vec<String> = ds.cells.iter().map(|c| c.label.clone()).collect();
    let mut runs = Vec::new();
    for &seed in &ctx.cfg.eval.seeds {
        let (ari, ami) = cluster_evaluate(&vectors, &labels, seed, ctx.exec)?;
        runs.push(ClusterRun { seed, ari, ami });
    }
    let ari = MeanStd::of(&runs.iter().map(|r| r.ari).collect::<Vec<_>>());
    let ami = MeanStd::of(&runs.iter().map(|r| r.ami).collect::<Vec<_>>());
    let table = Table {
        title: "Clustering".into(),
        header: vec!["Model".into(), "ARI".into(), "AMI".into()],
        rows: vec![vec![name.clone(), ari.to_string(), ami.to_string()]],
    };
    let out = ClusterOutput {
        model_id: provider.config().model_id.clone(),
        provider: name.clone(),
        n_cells: ds.len(),
        runs,
        ari,
        ami,
        table,
    };
    ctx.write_json(&format!("metrics/cluster-eval.{}.json", file_stem(&name)), &out)?;
    Ok(())
}
