//! Experiment configuration: one JSON document, `${VAR}` interpolated from
//! the environment before parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cellsense::ablate::AblationSpec;
use cellsense::corpus::synth::MarkerCorpusConfig;
use cellsense::corpus::DataFormat;
use cellsense::embed::ProviderConfig;
use cellsense::fusion::{GridSpec, HeadConfig, TrainConfig};
use cellsense::interpret::LimeConfig;
use cellsense::rerank::ChatProviderConfig;
use cellsense::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Input matrix; absent when `synthetic` is set.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<DataFormat>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    /// Generate the rank-structured marker corpus instead of reading a file.
    #[serde(default)]
    pub synthetic: Option<MarkerCorpusConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Existing `{cell_id: "train"|"test"}` file; overrides the fraction.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: default_test_fraction(), path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    /// Seeds for stochastic ablations and k-means restarts.
    pub seeds: Vec<u64>,
    /// Per-cell exact in-context counts (`{cell_id: n}`) from a real tokenizer.
    pub context_counts: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 10, seeds: vec![0], context_counts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Two provider names: the cell-level and the text-level modality.
    pub modalities: [String; 2],
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub base: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    Rerank,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankConfig {
    pub chat: ChatProviderConfig,
    #[serde(default = "default_mode")]
    pub mode: RerankMode,
    #[serde(default = "default_subset")]
    pub subset_size: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default = "default_parse_retries")]
    pub parse_retries: usize,
}

fn default_mode() -> RerankMode {
    RerankMode::Rerank
}
fn default_subset() -> usize {
    100
}
fn default_runs() -> usize {
    3
}
fn default_failure_rate() -> f64 {
    0.2
}
fn default_parse_retries() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretConfig {
    pub lime: LimeConfig,
    pub cells_per_type: usize,
    /// Externally computed attribution JSONL files.
    pub external: Vec<PathBuf>,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self { lime: LimeConfig::default(), cells_per_type: 10, external: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerConfig {
    pub db: PathBuf,
    /// Defaults to the dataset's label set.
    #[serde(default)]
    pub types: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub ablations: Vec<AblationSpec>,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub fusion: Option<FusionConfig>,
    #[serde(default)]
    pub rerank: Option<RerankConfig>,
    #[serde(default)]
    pub interpret: InterpretConfig,
    #[serde(default)]
    pub markers: Option<MarkerConfig>,
    #[serde(default)]
    pub exec: Option<Exec>,
}

/// A field-level problem found while validating.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub msg: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.msg)
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    MissingEnv(Vec<String>),
    Parse(serde_json::Error),
    Invalid(Vec<FieldError>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Read(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            Self::MissingEnv(v) => write!(f, "config references unset environment variables: {}", v.join(", ")),
            Self::Parse(e) => write!(f, "config line {} column {}: {e}", e.line(), e.column()),
            Self::Invalid(errs) => {
                writeln!(f, "invalid config:")?;
                for e in errs {
                    writeln!(f, "  {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Replaces `${NAME}` with the variable's value; `$${` escapes a literal `${`.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut missing = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(t) = tail.strip_prefix("$${") {
            out.push_str("${");
            rest = t;
        } else if let Some(t) = tail.strip_prefix("${") {
            match t.find('}') {
                Some(end) => {
                    let name = &t[..end];
                    match lookup(name) {
                        // JSON-escape so values cannot break the document.
                        Some(v) => {
                            let quoted = serde_json::to_string(&v).expect("string");
                            out.push_str(&quoted[1..quoted.len() - 1]);
                        }
                        None => missing.push(name.to_owned()),
                    }
                    rest = &t[end + 1..];
                }
                None => {
                    out.push_str(tail);
                    rest = "";
                }
            }
        } else {
            out.push('$');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    if missing.is_empty() {
        Ok(out)
    } else {
        missing.sort();
        missing.dedup();
        Err(ConfigError::MissingEnv(missing))
    }
}

/// The loaded config plus the digest of its interpolated text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_owned(), e))?;
    let text = interpolate(&raw, |k| std::env::var(k).ok())?;
    // Hash the raw text so interpolated secrets never reach a manifest.
    let sha256 = hex_sha256(raw.as_bytes());
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(ConfigError::Parse)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, sha256, base_dir })
}

impl ExperimentConfig {
    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self, base: &Path) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut err = |field: &str, msg: String| errs.push(FieldError { field: field.into(), msg });
        let exists = |p: &Path| base.join(p).exists();

        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => err("data", "set either path or synthetic, not both".into()),
            (None, None) => err("data", "one of path or synthetic is required".into()),
            (Some(p), None) => {
                if !exists(p) {
                    err("data.path", format!("{} does not exist", p.display()));
                }
                if self.data.format.is_none() {
                    err("data.format", "required with data.path (dense-csv or sparse-jsonl)".into());
                }
            }
            (None, Some(_)) => {}
        }
        for (field, p) in [("data.labels", &self.data.labels), ("data.vocabulary", &self.data.vocabulary), ("split.path", &self.split.path)] {
            if let Some(p) = p {
                if !exists(p) {
                    err(field, format!("{} does not exist", p.display()));
                }
            }
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            err("split.test_fraction", format!("{} outside (0, 1)", self.split.test_fraction));
        }
        for (i, a) in self.ablations.iter().enumerate() {
            if let Err(e) = a.validate() {
                err(&format!("ablations[{i}]"), e.to_string());
            }
        }
        for (name, p) in &self.providers {
            if let Err(e) = p.validate() {
                err(&format!("providers.{name}"), e.to_string());
            }
        }
        if self.eval.k == 0 {
            err("eval.k", "must be positive".into());
        }
        if self.eval.seeds.is_empty() {
            err("eval.seeds", "at least one seed is required".into());
        }
        if let Some(p) = &self.eval.context_counts {
            if !exists(p) {
                err("eval.context_counts", format!("{} does not exist", p.display()));
            }
        }
        if let Some(f) = &self.fusion {
            for m in &f.modalities {
                if !self.providers.contains_key(m) {
                    err("fusion.modalities", format!("unknown provider {m:?}"));
                }
            }
            if let Err(e) = f.base.validate() {
                err("fusion.base", e.to_string());
            }
        }
        if let Some(r) = &self.rerank {
            if let Err(e) = r.chat.validate() {
                err("rerank.chat", e.to_string());
            }
            if r.runs == 0 || r.subset_size == 0 {
                err("rerank", "runs and subset_size must be positive".into());
            }
        }
        if let Err(e) = self.interpret.lime.validate() {
            err("interpret.lime", e.to_string());
        }
        for (i, p) in self.interpret.external.iter().enumerate() {
            if !exists(p) {
                err(&format!("interpret.external[{i}]"), format!("{} does not exist", p.display()));
            }
        }
        if let Some(m) = &self.markers {
            if !exists(&m.db) {
                err("markers.db", format!("{} does not exist", m.db.display()));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(k: &str) -> Option<String> {
        match k {
            "KEY" => Some("s3\"cret".into()),
            "HOST" => Some("localhost".into()),
            _ => None,
        }
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate(r#"{"a":"${HOST}:80"}"#, env).unwrap(), r#"{"a":"localhost:80"}"#);
        assert_eq!(interpolate(r#""${KEY}""#, env).unwrap(), r#""s3\"cret""#);
        assert_eq!(interpolate("$${HOST} $5", env).unwrap(), "${HOST} $5");
        match interpolate("${B} ${A} ${B}", env) {
            Err(ConfigError::MissingEnv(v)) => assert_eq!(v, ["A", "B"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_lists_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"seed": 1, "data": {"path": "nope.csv"}, "split": {"test_fraction": 1.5}, "eval": {"k": 0}}"#,
        )
        .unwrap();
        let Err(ConfigError::Invalid(errs)) = cfg.validate(Path::new("/nonexistent")) else { panic!() };
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["data.path", "data.format", "split.test_fraction", "eval.k"]);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seed": 1, "data": {"synthetic": {}}, "typo": 1}"#).is_err());
        let ok: ExperimentConfig = serde_json::from_str(r#"{"seed": 1, "data": {"synthetic": {}}}"#).unwrap();
        assert!(ok.validate(Path::new(".")).is_ok());
    }
}
