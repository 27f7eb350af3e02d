//! Chat-model stages: `rerank` and `marker-quiz`.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;

use anyhow::{Context as _, Result};
use serde::Serialize;

use cellsense::evalcore::MeanStd;
use cellsense::pipeline::{embed_split, knn_evaluate};
use cellsense::report::Table;
use cellsense::rerank::{
    build_marker_quiz, parse_quiz_reply, run_llm_experiment, score_quiz, select_subset, ChatClient, HttpChatClient,
    LlmCell, PromptMode, QuizScore, RunOptions, SubsetManifest, TemplateId,
};

use crate::config::{hex_sha256, RerankConfig, RerankMode};
use crate::context::{file_stem, Ctx};

const SUBSET: &str = "rerank/subset.json";

fn rerank_config(ctx: &Ctx) -> Result<RerankConfig> {
    ctx.cfg.rerank.clone().context("config has no rerank section")
}

/// Reuses a persisted subset when it matches the seed and test split, so
/// every chat model scores the same cells.
fn subset(ctx: &mut Ctx, test_ids: &[String], size: usize) -> Result<SubsetManifest> {
    let path = ctx.path(SUBSET);
    if path.exists() {
        let prev: SubsetManifest = serde_json::from_reader(BufReader::new(File::open(&path)?))
            .with_context(|| format!("parsing {}", path.display()))?;
        let fresh = select_subset(test_ids, size, ctx.seed);
        if prev == fresh {
            ctx.track(SUBSET)?;
            return Ok(prev);
        }
        log::warn!("{} does not match the current seed or split; rewriting", path.display());
    }
    let m = select_subset(test_ids, size, ctx.seed);
    ctx.write_json(SUBSET, &m)?;
    Ok(m)
}

fn fraction(hits: usize, n: usize) -> f64 {
    hits as f64 / n.max(1) as f64
}

#[derive(Serialize)]
struct RerankOutput {
    provider: String,
    chat_model: String,
    mode: RerankMode,
    template_id: TemplateId,
    template_version: String,
    subset_seed: u64,
    subset_size: usize,
    knn_top1: f64,
    top3_oracle: f64,
    run_accuracies: Vec<f64>,
    run_failures: Vec<usize>,
    accuracy: MeanStd,
    table: Table,
}

pub fn rerank(ctx: &mut Ctx) -> Result<()> {
    let r = rerank_config(ctx)?;
    let name = ctx.select_provider()?;
    let provider = ctx.provider(&name)?;
    let ds = ctx.dataset()?;
    let base = ctx.sentences(&ds);
    let emb = embed_split(&ds, &base, &provider)?;
    provider.flush()?;
    let knn = knn_evaluate(&emb, ctx.cfg.eval.k, ctx.exec)?;

    let manifest = subset(ctx, &emb.test_ids, r.subset_size)?;
    let by_id: HashMap<&str, usize> = base.iter().enumerate().map(|(i, s)| (s.cell_id.as_str(), i)).collect();
    let preds: HashMap<&str, _> = knn.predictions.iter().map(|p| (p.cell_id.as_str(), p)).collect();
    let cells: Vec<LlmCell> = manifest
        .cell_ids
        .iter()
        .map(|id| LlmCell::from_prediction(preds[id.as_str()], base[by_id[id.as_str()]].clone()))
        .collect();
    let n = cells.len();
    let knn_top1 = fraction(cells.iter().filter(|c| c.candidates.first() == Some(&c.truth)).count(), n);
    let top3_oracle = fraction(cells.iter().filter(|c| c.candidates.contains(&c.truth)).count(), n);

    let mode = match r.mode {
        RerankMode::Rerank => PromptMode::Rerank,
        RerankMode::Classify => PromptMode::Classify { labels: ds.label_set.clone() },
    };
    let client = HttpChatClient::new(r.chat.clone())?;
    let opts = RunOptions {
        runs: r.runs,
        max_failure_rate: r.max_failure_rate,
        max_inflight: r.chat.max_inflight,
        parse_retries: r.parse_retries,
        store_raw: ctx.store_raw,
        ..RunOptions::default()
    };
    let exp = run_llm_experiment(&cells, &mode, &client, &opts)?;

    let model = file_stem(client.model_id());
    let mode_name = match r.mode {
        RerankMode::Rerank => "rerank",
        RerankMode::Classify => "classify",
    };
    for run in &exp.runs {
        ctx.write_jsonl(&format!("rerank/{model}/{mode_name}/run-{}.jsonl", run.run_index), &run.records)?;
    }
    let one = |x: f64| MeanStd::of(&[x]).to_string();
    let table = Table {
        title: format!("Chat-model {mode_name} ({n} cells)"),
        header: vec!["Method".into(), "Accuracy".into()],
        rows: vec![
            vec![format!("kNN top-1 ({name})"), one(knn_top1)],
            vec![format!("{} ({mode_name})", client.model_id()), exp.accuracy.to_string()],
            vec!["Top-3 oracle".into(), one(top3_oracle)],
        ],
    };
    let first = &exp.runs[0];
    let out = RerankOutput {
        provider: name,
        chat_model: client.model_id().to_owned(),
        mode: r.mode,
        template_id: first.template_id,
        template_version: first.template_version.clone(),
        subset_seed: manifest.seed,
        subset_size: n,
        knn_top1,
        top3_oracle,
        run_accuracies: exp.runs.iter().map(|r| r.accuracy).collect(),
        run_failures: exp.runs.iter().map(|r| r.failures).collect(),
        accuracy: exp.accuracy,
        table,
    };
    ctx.write_json(&format!("metrics/rerank.{model}.{mode_name}.json"), &out)?;
    Ok(())
}

#[derive(Serialize)]
struct QuizRun {
    run_index: usize,
    score: QuizScore,
    answers: Vec<Option<usize>>,
    request_sha256: String,
    response_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw_response: Option<String>,
}

#[derive(Serialize)]
struct QuizOutput {
    chat_model: String,
    seed: u64,
    cell_types: Vec<String>,
    excluded: Vec<String>,
    runs: Vec<QuizRun>,
    accuracy: MeanStd,
    table: Table,
}

/// Top-5 marker matching quiz, asked `rerank.runs` times.
pub fn marker_quiz(ctx: &mut Ctx) -> Result<()> {
    let r = rerank_config(ctx)?;
    let (db, types) = ctx.markers()?;
    let types = match types {
        Some(t) => t,
        None => ctx.dataset()?.label_set,
    };
    let quiz = build_marker_quiz(&db, &types, ctx.seed)?;
    let prompt = quiz.prompt()?;
    let client = HttpChatClient::new(r.chat.clone())?;
    let mut runs = Vec::with_capacity(r.runs);
    for run_index in 0..r.runs {
        let reply = client.complete(&prompt)?;
        let answers = parse_quiz_reply(&reply.content, &quiz);
        runs.push(QuizRun {
            run_index,
            score: score_quiz(&answers, &quiz)?,
            answers,
            request_sha256: hex_sha256(reply.request_body.as_bytes()),
            response_sha256: hex_sha256(reply.content.as_bytes()),
            raw_response: ctx.store_raw.then(|| reply.content.clone()),
        });
    }
    let accs: Vec<f64> = runs.iter().map(|q| fraction(q.score.correct, q.score.total)).collect();
    let accuracy = MeanStd::of(&accs);
    let table = Table {
        title: "Marker quiz".into(),
        header: vec!["Model".into(), "Correct".into(), "Accuracy".into()],
        rows: vec![vec![
            client.model_id().to_owned(),
            runs.iter().map(|q| q.score.to_string()).collect::<Vec<_>>().join(", "),
            accuracy.to_string(),
        ]],
    };
    let out = QuizOutput {
        chat_model: client.model_id().to_owned(),
        seed: ctx.seed,
        cell_types: quiz.questions.iter().map(|q| q.cell_type.clone()).collect(),
        excluded: quiz.excluded.clone(),
        runs,
        accuracy,
        table,
    };
    ctx.write_json(&format!("metrics/marker-quiz.{}.json", file_stem(client.model_id())), &out)?;
    Ok(())
}
