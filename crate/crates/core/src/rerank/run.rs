use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_classify_prompt, build_rerank_prompt, parse_label_reply, ChatClient, PromptSpec, RerankError, TemplateId};
use crate::corpus::CellSentence;
use crate::embed::DEFAULT_PROMPT_PREFIX;
use crate::evalcore::MeanStd;
use crate::par::bounded_map;
use crate::pipeline::Prediction;
use crate::seed;

/// A cell to be labelled. `truth` never leaves the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCell {
    pub cell_id: String,
    pub sentence: CellSentence,
    /// Ranked k-NN candidates (rerank mode).
    pub candidates: Vec<String>,
    pub truth: String,
}

impl LlmCell {
    /// Takes the top three neighbour labels of a k-NN prediction.
    pub fn from_prediction(p: &Prediction, sentence: CellSentence) -> Self {
        Self {
            cell_id: p.cell_id.clone(),
            sentence,
            candidates: p.ranked.iter().take(3).cloned().collect(),
            truth: p.truth.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptMode {
    Classify { labels: Vec<String> },
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub runs: usize,
    pub max_failure_rate: f64,
    pub max_inflight: usize,
    /// Extra requests after an unparseable or out-of-set reply.
    pub parse_retries: usize,
    pub store_raw: bool,
    pub prompt_prefix: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            runs: 3,
            max_failure_rate: 0.2,
            max_inflight: 4,
            parse_retries: 1,
            store_raw: false,
            prompt_prefix: DEFAULT_PROMPT_PREFIX.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub label: String,
    /// The model's valid answer, if it gave one.
    pub llm_choice: Option<String>,
    pub fallback_used: bool,
    pub attempts: usize,
    pub request: String,
    pub response: Option<String>,
}

fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Asks once, re-asks up to `parse_retries` times on an invalid reply, then
/// falls back to the first allowed label.
pub fn classify_with_llm(client: &dyn ChatClient, prompt: &PromptSpec, parse_retries: usize) -> Result<Choice, RerankError> {
    let first = prompt.allowed_labels.first().ok_or(RerankError::EmptyCandidates)?.clone();
    let mut last = None;
    for attempt in 1..=parse_retries + 1 {
        let reply = client.complete(prompt)?;
        if let Some(label) = parse_label_reply(&reply.content, &prompt.allowed_labels) {
            return Ok(Choice {
                label: label.clone(),
                llm_choice: Some(label),
                fallback_used: false,
                attempts: attempt,
                request: reply.request_body,
                response: Some(reply.content),
            });
        }
        log::debug!("invalid reply on attempt {attempt}: {:?}", reply.content);
        last = Some(reply);
    }
    let last = last.expect("at least one attempt");
    Ok(Choice {
        label: first,
        llm_choice: None,
        fallback_used: true,
        attempts: parse_retries + 1,
        request: last.request_body,
        response: Some(last.content),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRecord {
    pub cell_id: String,
    pub candidates: Vec<String>,
    pub llm_choice: Option<String>,
    pub final_label: String,
    pub fallback_used: bool,
    pub correct: bool,
    pub request_sha256: Option<String>,
    pub response_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_request: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRun {
    pub run_index: usize,
    pub model_id: String,
    pub template_id: TemplateId,
    pub template_version: String,
    pub accuracy: f64,
    pub failures: usize,
    pub records: Vec<LlmRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExperiment {
    pub runs: Vec<LlmRun>,
    pub accuracy: MeanStd,
}

fn prompt_for(cell: &LlmCell, mode: &PromptMode, prefix: &str) -> Result<PromptSpec, RerankError> {
    match mode {
        PromptMode::Classify { labels } => build_classify_prompt(&cell.sentence, labels, prefix),
        PromptMode::Rerank => build_rerank_prompt(&cell.sentence, &cell.candidates, prefix),
    }
}

/// Labels every cell `opts.runs` times. A run aborts when the share of
/// cells whose request failed outright exceeds `opts.max_failure_rate`.
pub fn run_llm_experiment(
    cells: &[LlmCell],
    mode: &PromptMode,
    client: &dyn ChatClient,
    opts: &RunOptions,
) -> Result<LlmExperiment, RerankError> {
    if cells.is_empty() || opts.runs == 0 {
        return Err(RerankError::Config("need at least one cell and one run".into()));
    }
    let prompts = cells.iter().map(|c| prompt_for(c, mode, &opts.prompt_prefix)).collect::<Result<Vec<_>, _>>()?;
    let template_id = prompts[0].template_id;
    let mut runs = Vec::with_capacity(opts.runs);
    for run_index in 0..opts.runs {
        let results = bounded_map(&prompts, opts.max_inflight, |p| classify_with_llm(client, p, opts.parse_retries));
        let failures = results.iter().filter(|r| r.is_err()).count();
        if failures as f64 > opts.max_failure_rate * cells.len() as f64 {
            return Err(RerankError::TooManyFailures { failed: failures, total: cells.len() });
        }
        let records: Vec<LlmRecord> = cells
            .iter()
            .zip(&prompts)
            .zip(results)
            .map(|((cell, prompt), r)| {
                let (choice, error) = match r {
                    Ok(c) => (c, None),
                    Err(e) => {
                        log::warn!("cell {}: {e}; using fallback", cell.cell_id);
                        let c = Choice {
                            label: prompt.allowed_labels[0].clone(),
                            llm_choice: None,
                            fallback_used: true,
                            attempts: 0,
                            request: String::new(),
                            response: None,
                        };
                        (c, Some(e.to_string()))
                    }
                };
                let sent = !choice.request.is_empty();
                LlmRecord {
                    cell_id: cell.cell_id.clone(),
                    candidates: prompt.allowed_labels.clone(),
                    correct: choice.label == cell.truth,
                    llm_choice: choice.llm_choice,
                    final_label: choice.label,
                    fallback_used: choice.fallback_used,
                    request_sha256: sent.then(|| sha256_hex(&choice.request)),
                    response_sha256: choice.response.as_deref().map(sha256_hex),
                    error,
                    raw_request: (opts.store_raw && sent).then(|| choice.request.clone()),
                    raw_response: if opts.store_raw { choice.response } else { None },
                }
            })
            .collect();
        let accuracy = records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;
        runs.push(LlmRun {
            run_index,
            model_id: client.model_id().to_owned(),
            template_id,
            template_version: prompts[0].version.clone(),
            accuracy,
            failures,
            records,
        });
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    Ok(LlmExperiment { runs, accuracy: MeanStd::of(&accs) })
}

/// Fixed cell subset shared by every model in an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub seed: u64,
    pub cell_ids: Vec<String>,
}

/// Uniform sample without replacement, kept in input order.
pub fn select_subset(ids: &[String], size: usize, seed_: u64) -> SubsetManifest {
    let cell_ids = if size >= ids.len() {
        ids.to_vec()
    } else {
        let mut idx = sample(&mut seed::rng(seed_, "subset", &[]), ids.len(), size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| ids[i].clone()).collect()
    };
    SubsetManifest { seed: seed_, cell_ids }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rerank::ChatReply;
    use std::collections::HashMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Answers with a fixed function of the prompt.
    struct Stub<F: Fn(&PromptSpec) -> Result<String, RerankError> + Sync>(F, AtomicUsize);

    impl<F: Fn(&PromptSpec) -> Result<String, RerankError> + Sync> ChatClient for Stub<F> {
        fn model_id(&self) -> &str {
            "stub"
        }
        fn complete(&self, prompt: &PromptSpec) -> Result<ChatReply, RerankError> {
            self.1.fetch_add(1, Ordering::Relaxed);
            Ok(ChatReply { content: (self.0)(prompt)?, request_body: prompt.text.clone() })
        }
    }

    fn stub<F: Fn(&PromptSpec) -> Result<String, RerankError> + Sync>(f: F) -> Stub<F> {
        Stub(f, AtomicUsize::new(0))
    }

    fn answer(label: &str) -> String {
        format!(r#"{{"cell_type":"{label}"}}"#)
    }

    fn cells() -> Vec<LlmCell> {
        let mk = |id: &str, cands: &[&str], truth: &str| LlmCell {
            cell_id: id.into(),
            sentence: CellSentence::identity(id, vec![format!("G{id}"), "INS".into()]),
            candidates: cands.iter().map(|c| c.to_string()).collect(),
            truth: truth.into(),
        };
        vec![
            mk("a", &["Beta", "Alpha", "Delta"], "Beta"),
            mk("b", &["Beta", "Alpha"], "Alpha"),
            mk("c", &["Delta", "Beta", "Alpha"], "Gamma"),
            mk("d", &["Alpha"], "Alpha"),
        ]
    }

    #[test]
    fn identity_stub_reproduces_top1() {
        let s = stub(|p| Ok(answer(&p.allowed_labels[0])));
        let opts = RunOptions { runs: 2, ..RunOptions::default() };
        let exp = run_llm_experiment(&cells(), &PromptMode::Rerank, &s, &opts).unwrap();
        assert_eq!(exp.runs.len(), 2);
        assert_eq!(exp.runs[0].accuracy, 0.5);
        assert_eq!(exp.accuracy.std, Some(0.0));
        assert!(exp.runs[0].records.iter().all(|r| !r.fallback_used && r.candidates.contains(&r.final_label)));
        assert!(exp.runs[0].records[0].raw_request.is_none());
        assert_eq!(exp.runs[0].records[0].request_sha256.as_ref().unwrap().len(), 64);
    }

    #[test]
    fn oracle_stub_reaches_containment() {
        let truth: HashMap<String, String> =
            cells().into_iter().map(|c| (format!("G{}", c.cell_id), c.truth)).collect();
        let s = stub(move |p| {
            let key = truth.keys().find(|k| p.text.contains(k.as_str())).unwrap();
            let t = &truth[key];
            Ok(answer(if p.allowed_labels.contains(t) { t } else { &p.allowed_labels[0] }))
        });
        let opts = RunOptions { runs: 1, ..RunOptions::default() };
        let exp = run_llm_experiment(&cells(), &PromptMode::Rerank, &s, &opts).unwrap();
        assert_eq!(exp.runs[0].accuracy, 0.75);
        assert_eq!(exp.accuracy.std, None);
    }

    #[test]
    fn invalid_reply_falls_back_and_flags() {
        let s = stub(|_| Ok(answer("Bta")));
        let opts = RunOptions { runs: 1, parse_retries: 2, store_raw: true, ..RunOptions::default() };
        let exp = run_llm_experiment(&cells()[..1], &PromptMode::Rerank, &s, &opts).unwrap();
        let r = &exp.runs[0].records[0];
        assert!(r.fallback_used);
        assert_eq!(r.final_label, "Beta");
        assert_eq!(r.llm_choice, None);
        assert_eq!(s.1.load(Ordering::Relaxed), 3);
        assert!(r.raw_response.as_deref().unwrap().contains("Bta"));
    }

    #[test]
    fn classify_mode_uses_full_label_list() {
        let labels: Vec<String> = ["Gamma", "Alpha", "Beta", "Delta"].iter().map(|s| s.to_string()).collect();
        let s = stub(|p| Ok(answer(&p.allowed_labels[1])));
        let opts = RunOptions { runs: 1, ..RunOptions::default() };
        let exp = run_llm_experiment(&cells(), &PromptMode::Classify { labels }, &s, &opts).unwrap();
        // Sorted list: Alpha, Beta, Delta, Gamma; the stub always says Beta.
        assert_eq!(exp.runs[0].template_id, TemplateId::Classify);
        assert_eq!(exp.runs[0].accuracy, 0.25);
    }

    #[test]
    fn failure_rate_aborts() {
        let s = stub(|p| {
            if p.text.contains("Gc") || p.text.contains("Gd") {
                Err(RerankError::Transport { attempts: 4, msg: "down".into() })
            } else {
                Ok(answer(&p.allowed_labels[0]))
            }
        });
        let opts = RunOptions { runs: 1, ..RunOptions::default() };
        let err = run_llm_experiment(&cells(), &PromptMode::Rerank, &s, &opts).unwrap_err();
        assert!(matches!(err, RerankError::TooManyFailures { failed: 2, total: 4 }));

        let lenient = RunOptions { runs: 1, max_failure_rate: 0.5, ..RunOptions::default() };
        let exp = run_llm_experiment(&cells(), &PromptMode::Rerank, &s, &lenient).unwrap();
        let r = &exp.runs[0].records[2];
        assert!(r.fallback_used && r.error.is_some() && r.final_label == "Delta");
    }

    #[test]
    fn subset_is_seeded() {
        let ids: Vec<String> = (0..500).map(|i| format!("cell{i}")).collect();
        let a = select_subset(&ids, 100, 42);
        assert_eq!(a.cell_ids.len(), 100);
        assert_eq!(a, select_subset(&ids, 100, 42));
        assert_ne!(a, select_subset(&ids, 100, 43));
        let pos: Vec<usize> = a.cell_ids.iter().map(|c| ids.iter().position(|x| x == c).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_subset(&ids[..5], 100, 1).cell_ids.len(), 5);
    }
}
