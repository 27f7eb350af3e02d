//! State shared by every subcommand: resolved config, output layout,
//! artifact bookkeeping and the run manifest.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context as _, Result};
use serde::Serialize;

use cellsense::ablate::{AblationKind, AblationSpec, Ablator};
use cellsense::corpus::synth::marker_corpus;
use cellsense::corpus::{build_sentences, load_dataset, read_split, stratified_split, CellSentence, Dataset, LoadOptions};
use cellsense::embed::{Provider, ProviderConfig, ProviderKind};
use cellsense::interpret::MarkerDb;
use cellsense::Exec;

use crate::config::{hex_sha256, ExperimentConfig, LoadedConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub provider: Option<String>,
    pub store_raw: bool,
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    toolkit_version: &'a str,
    config_sha256: &'a str,
    seed: u64,
    provider: Option<&'a str>,
    started_unix: u64,
    wall_clock_secs: f64,
    status: &'a str,
    artifacts: &'a [Artifact],
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    notes: &'a serde_json::Map<String, serde_json::Value>,
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub config_sha256: String,
    base_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    provider_flag: Option<String>,
    active_provider: Option<String>,
    pub store_raw: bool,
    pub exec: Exec,
    command: &'static str,
    started: Instant,
    started_unix: u64,
    artifacts: Vec<Artifact>,
    notes: serde_json::Map<String, serde_json::Value>,
}

impl Ctx {
    pub fn new(loaded: LoadedConfig, ov: Overrides, command: &'static str) -> Result<Self> {
        let LoadedConfig { config: cfg, sha256, base_dir } = loaded;
        let out = match (ov.out, &cfg.out) {
            (Some(o), _) => o,
            (None, Some(o)) => base_dir.join(o),
            (None, None) => PathBuf::from("cellsense-out"),
        };
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        if let Some(p) = &ov.provider {
            if !cfg.providers.contains_key(p) {
                bail!("unknown provider {p:?}; configured: {:?}", cfg.providers.keys().collect::<Vec<_>>());
            }
        }
        Ok(Self {
            seed: ov.seed.unwrap_or(cfg.seed),
            exec: cfg.exec.unwrap_or_default(),
            cfg,
            config_sha256: sha256,
            base_dir,
            out,
            provider_flag: ov.provider,
            active_provider: None,
            store_raw: ov.store_raw,
            command,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            artifacts: Vec::new(),
            notes: serde_json::Map::new(),
        })
    }

    /// Paths in the config are relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Records a free-form manifest entry.
    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.notes.insert(key.into(), serde_json::to_value(value).expect("serializable note"));
    }

    /// Dataset with its train/test split applied.
    pub fn dataset(&self) -> Result<Dataset> {
        let d = &self.cfg.data;
        let ds = match (&d.synthetic, &d.path) {
            (Some(s), _) => marker_corpus(s, self.seed)?,
            (None, Some(p)) => {
                let opts = LoadOptions {
                    labels: d.labels.as_deref().map(|p| self.resolve(p)),
                    vocabulary: d.vocabulary.as_deref().map(|p| self.resolve(p)),
                };
                let format = d.format.context("data.format is required")?;
                load_dataset(&self.resolve(p), format, &opts)?
            }
            (None, None) => bail!("data needs a path or a synthetic corpus"),
        };
        Ok(match &self.cfg.split.path {
            Some(p) => read_split(ds, File::open(self.resolve(p))?)?,
            None => stratified_split(ds, self.cfg.split.test_fraction, self.seed)?,
        })
    }

    pub fn sentences(&self, ds: &Dataset) -> Vec<CellSentence> {
        let set = build_sentences(ds, self.exec);
        if !set.all_zero.is_empty() {
            log::warn!("{} cells have empty sentences", set.all_zero.len());
        }
        set.sentences
    }

    /// Configured ablations with the baseline first.
    pub fn ablations(&self) -> Vec<AblationSpec> {
        let mut v = self.cfg.ablations.clone();
        if !v.iter().any(|a| a.kind == AblationKind::Identity) {
            v.insert(0, AblationSpec::identity());
        }
        v
    }

    /// The spec used for repeat `run_seed`: stochastic ablations offset
    /// their configured seed by the run seed.
    pub fn seeded(spec: &AblationSpec, run_seed: u64) -> AblationSpec {
        let mut s = spec.clone();
        if s.kind.is_stochastic() {
            s.seed = Some(s.seed.unwrap_or(0).wrapping_add(run_seed));
        }
        s
    }

    pub fn ablator(&self, spec: AblationSpec) -> Result<Ablator> {
        let mut ab = Ablator::new(spec)?;
        if let Some(p) = &self.cfg.eval.context_counts {
            let f = File::open(self.resolve(p)).with_context(|| format!("opening {}", p.display()))?;
            let counts: HashMap<String, usize> =
                serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))?;
            ab = ab.with_context_counts(counts);
        }
        Ok(ab)
    }

    /// `--provider`, else the first configured provider by name. The choice
    /// is recorded in the manifest.
    pub fn select_provider(&mut self) -> Result<String> {
        let name = match (&self.provider_flag, self.cfg.providers.keys().next()) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => p.clone(),
            (None, None) => bail!("no embedding providers configured"),
        };
        self.active_provider = Some(name.clone());
        Ok(name)
    }

    /// Opens a provider. Non-store providers cache under
    /// `embeddings/<name>.embs.jsonl` unless a store path is configured.
    pub fn provider(&self, name: &str) -> Result<Provider> {
        let mut cfg: ProviderConfig =
            self.cfg.providers.get(name).with_context(|| format!("unknown provider {name:?}"))?.clone();
        cfg.store = match cfg.store.take() {
            Some(p) => Some(self.resolve(&p)),
            None if cfg.kind != ProviderKind::Store => {
                let dir = self.path("embeddings");
                fs::create_dir_all(&dir)?;
                Some(dir.join(format!("{name}.embs.jsonl")))
            }
            None => None,
        };
        Ok(Provider::new(cfg)?)
    }

    pub fn markers(&self) -> Result<(MarkerDb, Option<Vec<String>>)> {
        let m = self.cfg.markers.as_ref().context("config has no markers section")?;
        let f = File::open(self.resolve(&m.db)).with_context(|| format!("opening {}", m.db.display()))?;
        Ok((MarkerDb::read_tsv(BufReader::new(f))?, m.types.clone()))
    }

    fn create(&mut self, rel: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(f)))
    }

    /// Writes an artifact through `f` and records its digest.
    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let (path, mut w) = self.create(rel)?;
        f(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        self.track(rel)?;
        Ok(path)
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        self.write_with(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<PathBuf> {
        self.write_with(rel, |w| {
            for r in rows {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    /// Records a file written by other means (e.g. a provider cache).
    pub fn track(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.path(rel))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact { path: rel.to_owned(), sha256: hex_sha256(&bytes) });
        Ok(())
    }

    /// Writes `manifests/<command>.json`; called on success and failure so
    /// completed artifacts stay traceable.
    pub fn finish(&mut self, ok: bool) -> Result<()> {
        let provider = self.active_provider.clone();
        let m = Manifest {
            command: self.command,
            toolkit_version: VERSION,
            config_sha256: &self.config_sha256,
            seed: self.seed,
            provider: provider.as_deref(),
            started_unix: self.started_unix,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            status: if ok { "ok" } else { "failed" },
            artifacts: &self.artifacts,
            notes: &self.notes,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        let dir = self.path("manifests");
        fs::create_dir_all(&dir)?;
        let name = match &self.active_provider {
            Some(p) => format!("{}.{p}.json", self.command),
            None => format!("{}.json", self.command),
        };
        fs::write(dir.join(name), text)?;
        Ok(())
    }
}

/// Keeps file names portable: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}
