#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use common::TestServer;

const BIN: &str = env!("CARGO_BIN_EXE_cellsense");

const TABLE_COLUMNS: [&str; 6] = [
    "No Ablations / Baseline",
    "Gene Name Ablation",
    "Order Ablation (All Genes)",
    "Order Ablation (In Context)",
    "Order Ablation (Top 10% In Context)",
    "Gene Name + Order Ablation (In Context)",
];

fn config(extra: Value) -> Value {
    let budget = json!({"max_tokens": 40, "prefix_tokens": 8});
    let mut c = json!({
        "seed": 3,
        "out": "out",
        "data": {"synthetic": {"n_types": 4, "cells_per_type": 20, "noise_pool": 300, "sentence_len": 80, "window": 30}},
        "split": {"test_fraction": 0.25},
        "ablations": [
            {"kind": "identity"},
            {"kind": "gene_name_hash"},
            {"kind": "shuffle_all", "seed": 1},
            {"kind": "shuffle_in_context", "seed": 1, "budget": budget},
            {"kind": "shuffle_top10_in_context", "seed": 1, "budget": budget},
            {"kind": "hash_then_shuffle_in_context", "seed": 1, "budget": budget}
        ],
        "providers": {"mock": {"kind": "mock", "model_id": "mock-v1", "dim": 64, "budget": budget}},
        "eval": {"k": 5, "seeds": [0, 1]},
        "head": {"max_epochs": 20},
        "interpret": {"lime": {"n_samples": 40}, "cells_per_type": 2}
    });
    if let (Value::Object(c), Value::Object(e)) = (&mut c, extra) {
        c.extend(e);
    }
    c
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(cfg: &Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.json"), serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        Self { dir }
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.args(args).arg("--config").arg(self.dir.path().join("cfg.json")).env("RUST_LOG", "warn");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn ok(&self, args: &[&str]) {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.dir.path().join("out").join(rel)
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_slice(&fs::read(self.out(rel)).unwrap()).unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage:"));
    let o = Command::new(BIN).arg("knn-eval").output().unwrap();
    assert_eq!(o.status.code(), Some(2), "missing --config");
}

#[test]
fn invalid_config_reports_fields() {
    let mut cfg = config(json!({"eval": {"k": 0, "seeds": [0]}}));
    cfg["data"] = json!({"path": "missing.csv", "format": "dense-csv"});
    cfg["ablations"] = json!([{"kind": "shuffle_all"}]);
    let ws = Workspace::new(&cfg);
    let o = ws.run(&["knn-eval"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    for field in ["data.path", "ablations[0]", "eval.k"] {
        assert!(e.contains(field), "{field} missing from: {e}");
    }

    let ws = Workspace::new(&json!({"seed": 1, "data": {"synthetic": {}}, "providers": {"p": {"kind": "http", "model_id": "m", "dim": 8, "endpoint": "${NOT_SET_ANYWHERE}"}}}));
    let o = ws.run(&["embed"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NOT_SET_ANYWHERE"));
}

#[test]
fn knn_eval_schema_and_byte_identical_rerun() {
    let ws = Workspace::new(&config(json!({})));
    ws.ok(&["knn-eval"]);
    let path = ws.out("metrics/knn-eval.mock.json");
    let first = fs::read(&path).unwrap();
    let m: Value = serde_json::from_slice(&first).unwrap();
    let columns = m["columns"].as_array().unwrap();
    assert_eq!(columns.len(), 6);
    for c in columns {
        let runs = c["metrics"]["runs"].as_array().unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].as_object().unwrap().len(), 6);
        for k in ["accuracy", "macro_f1", "ari", "ami"] {
            assert!(c["metrics"][k]["mean"].is_number(), "{k}");
        }
    }
    // Field order as written, not as parsed into a sorted map.
    let text = String::from_utf8_lossy(&first);
    let pos: Vec<usize> = ["\"accuracy\"", "\"macro_precision\"", "\"macro_recall\"", "\"macro_f1\"", "\"ari\"", "\"ami\""]
        .iter()
        .map(|k| text.find(&format!("{k}: 0")).or_else(|| text.find(&format!("{k}: 1"))).expect(k))
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "run field order {pos:?}");
    let acc = |i: usize| columns[i]["metrics"]["accuracy"]["mean"].as_f64().unwrap();
    assert!(acc(0) > acc(2), "baseline {} vs shuffle-all {}", acc(0), acc(2));

    let manifest = ws.json("manifests/knn-eval.mock.json");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_clock_secs"].is_number());
    assert!(manifest["toolkit_version"].is_string());
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(artifacts.iter().any(|a| a["path"] == "metrics/knn-eval.mock.json"));

    ws.ok(&["knn-eval"]);
    assert_eq!(fs::read(&path).unwrap(), first);
}

/// Numeric tokens in a piece of text.
fn numbers(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .map(|t| t.trim_matches(|c| c == '.' || c == '-'))
        .filter(|t| t.parse::<f64>().is_ok())
        .collect()
}

#[test]
fn report_tables_trace_to_json() {
    let ws = Workspace::new(&config(json!({})));
    for c in ["ingest", "knn-eval", "cluster-eval", "train-head", "report"] {
        ws.ok(&[c]);
    }
    let md = fs::read_to_string(ws.out("report.md")).unwrap();
    let json = fs::read_to_string(ws.out("report.json")).unwrap();
    let nums = numbers(&md);
    assert!(nums.len() > 50);
    for n in nums {
        assert!(json.contains(n), "{n} not in report.json");
    }

    let header = md.lines().find(|l| l.starts_with("| Metric |")).expect("ablation table");
    let cols: Vec<&str> = header.trim_matches('|').split('|').map(str::trim).skip(1).collect();
    assert_eq!(cols, TABLE_COLUMNS);
    assert!(md.contains("| Accuracy |") && md.contains("| AMI |"));
    // Mean (Std) cells.
    assert!(md.lines().any(|l| l.starts_with("| F1 |") && l.contains(" (")));
}

#[test]
fn sentences_carry_prefixed_text() {
    let ws = Workspace::new(&config(json!({})));
    ws.ok(&["sentences"]);
    let text = fs::read_to_string(ws.out("sentences/mock/identity.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 80);
    for r in &rows {
        assert_eq!(r.as_object().unwrap().len(), 3);
        assert_eq!(r["variant"], "identity");
        assert!(r["text"].as_str().unwrap().starts_with("A cell with genes ranked by expression: "));
    }
    let shuffled = fs::read_to_string(ws.out("sentences/mock/shuffle_all_s1.jsonl")).unwrap();
    assert_ne!(shuffled, text);
}

fn chat_stub() -> TestServer {
    TestServer::start(Box::new(|req, _| {
        let schema = &req.body["response_format"]["json_schema"]["schema"]["properties"];
        let content = match schema.get("cell_type") {
            // Always pick the last allowed label.
            Some(p) => json!({"cell_type": p["enum"].as_array().unwrap().last().unwrap()}).to_string(),
            None => {
                let answers: serde_json::Map<String, Value> =
                    schema.as_object().unwrap().keys().map(|g| (g.clone(), json!(1))).collect();
                Value::Object(answers).to_string()
            }
        };
        (200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
    }))
}

fn marker_tsv(dir: &Path) {
    let mut s = String::from("cell_type\tgene\trank\n");
    for t in 0..4 {
        for j in 0..6 {
            s.push_str(&format!("type{t}\tM{:03}\t{}\n", t * 10 + j, j + 1));
        }
    }
    fs::write(dir.join("markers.tsv"), s).unwrap();
}

#[test]
fn rerank_and_quiz_against_a_chat_endpoint() {
    let server = chat_stub();
    let cfg = config(json!({
        "rerank": {"chat": {"endpoint": "${CHAT_URL}", "model_id": "stub-chat", "retry": {"max_retries": 0}}, "subset_size": 10, "runs": 2},
        "markers": {"db": "markers.tsv"}
    }));
    let ws = Workspace::new(&cfg);
    marker_tsv(ws.dir.path());
    let env = [("CHAT_URL", server.url.as_str())];
    let o = ws.run_env(&["rerank", "--store-raw"], &env);
    assert!(o.status.success(), "{}", stderr(&o));

    let subset = ws.json("rerank/subset.json");
    assert_eq!(subset["cell_ids"].as_array().unwrap().len(), 10);
    let m = ws.json("metrics/rerank.stub-chat.rerank.json");
    assert_eq!(m["subset_size"], 10);
    assert_eq!(m["run_accuracies"].as_array().unwrap().len(), 2);
    let top3 = m["top3_oracle"].as_f64().unwrap();
    assert!(m["accuracy"]["mean"].as_f64().unwrap() <= top3);
    let records = fs::read_to_string(ws.out("rerank/stub-chat/rerank/run-0.jsonl")).unwrap();
    let first: Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert_eq!(first["request_sha256"].as_str().unwrap().len(), 64);
    assert!(first["raw_request"].is_string());
    assert_eq!(server.count(), 20);

    // The persisted subset is reused.
    let o = ws.run_env(&["rerank"], &env);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ws.json("rerank/subset.json"), subset);

    let o = ws.run_env(&["marker-quiz"], &env);
    assert!(o.status.success(), "{}", stderr(&o));
    let q = ws.json("metrics/marker-quiz.stub-chat.json");
    assert_eq!(q["runs"][0]["score"]["total"], 4);
    // Every answer is list 1: exactly one question is right.
    assert_eq!(q["runs"][0]["score"]["correct"], 1);
}

#[test]
fn failed_stage_exits_one_and_keeps_a_manifest() {
    let ws = Workspace::new(&config(json!({})));
    let o = ws.run(&["lime"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train-head"));
    assert_eq!(ws.json("manifests/lime.mock.json")["status"], "failed");

    ws.ok(&["train-head"]);
    ws.ok(&["lime"]);
    let m = ws.json("metrics/lime.mock.json");
    assert_eq!(m["cells"], 8);
    assert_eq!(m["signatures"].as_array().unwrap().len(), 4);
}
