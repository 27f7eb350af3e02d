use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::http::HttpEmbedder;
use super::mock::{mock_embed_tokens, mock_tokenize};
use super::store::{store_key, EmbeddingStore, StoreHeader};
use super::{EmbedError, EmbeddingVector, RetryPolicy};
use crate::ablate::{in_context_count, TokenBudget};
use crate::corpus::CellSentence;
use crate::par::Exec;

pub const DEFAULT_PROMPT_PREFIX: &str = "A cell with genes ranked by expression: ";
pub const EMBED_KEY_ENV: &str = "CELLSENSE_EMBED_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Read-only lookups in a precomputed store.
    Store,
    /// Remote embeddings endpoint.
    Http,
    /// Deterministic hashed bag-of-words.
    Mock,
}

fn default_auth_env() -> String {
    EMBED_KEY_ENV.to_owned()
}
fn default_prefix() -> String {
    DEFAULT_PROMPT_PREFIX.to_owned()
}
fn default_true() -> bool {
    true
}
fn default_batch() -> usize {
    64
}
fn default_inflight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model_id: String,
    pub dim: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    /// Prepended to the rendered sentence by the HTTP backend. The mock
    /// embeds gene tokens only.
    #[serde(default = "default_prefix")]
    pub prompt_prefix: String,
    #[serde(default)]
    pub budget: TokenBudget,
    /// Cut sentences to their in-context genes before encoding.
    #[serde(default = "default_true")]
    pub truncate_to_context: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Mock hashing seed.
    #[serde(default)]
    pub seed: u64,
    /// Backing store: the source for `store`, a write-through cache otherwise.
    #[serde(default)]
    pub store: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn mock(model_id: &str, dim: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::Mock,
            model_id: model_id.to_owned(),
            dim,
            endpoint: None,
            auth_env: default_auth_env(),
            prompt_prefix: default_prefix(),
            budget: TokenBudget::default(),
            truncate_to_context: true,
            batch_size: default_batch(),
            max_inflight: default_inflight(),
            retry: RetryPolicy::default(),
            seed,
            store: None,
        }
    }

    pub fn http(model_id: &str, dim: usize, endpoint: &str) -> Self {
        Self { kind: ProviderKind::Http, endpoint: Some(endpoint.to_owned()), ..Self::mock(model_id, dim, 0) }
    }

    pub fn store(model_id: &str, dim: usize, path: PathBuf) -> Self {
        Self { kind: ProviderKind::Store, store: Some(path), ..Self::mock(model_id, dim, 0) }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.kind == ProviderKind::Mock && self.dim < 8 {
            return bad("mock dim must be at least 8");
        }
        if self.kind == ProviderKind::Http && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return bad("http provider requires an endpoint");
        }
        if self.kind == ProviderKind::Store && self.store.is_none() {
            return bad("store provider requires a store path");
        }
        if self.batch_size == 0 || self.max_inflight == 0 {
            return bad("batch_size and max_inflight must be positive");
        }
        self.budget.validate().map_err(|e| EmbedError::Config(e.to_string()))
    }
}

enum Backend {
    Mock,
    Http(HttpEmbedder),
    Store,
}

/// A configured embedding source with optional write-through cache.
pub struct Provider {
    config: ProviderConfig,
    backend: Backend,
    cache: Option<RwLock<EmbeddingStore>>,
    dirty: AtomicBool,
    remote_calls: AtomicUsize,
}

impl Provider {
    /// Opens the backing store when configured. A missing cache file starts
    /// empty; a missing source store for the `store` kind is an error.
    pub fn new(config: ProviderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let backend = match config.kind {
            ProviderKind::Mock => Backend::Mock,
            ProviderKind::Store => Backend::Store,
            ProviderKind::Http => {
                let key = std::env::var(&config.auth_env).ok();
                let endpoint = config.endpoint.as_deref().unwrap_or_default();
                Backend::Http(HttpEmbedder::new(endpoint, &config.model_id, config.dim, key, config.retry))
            }
        };
        let cache = match &config.store {
            Some(path) if path.exists() => {
                let store = EmbeddingStore::open(path)?;
                if store.header().dim != config.dim {
                    return Err(EmbedError::DimMismatch { expected: config.dim, got: store.header().dim });
                }
                Some(RwLock::new(store))
            }
            Some(path) if config.kind == ProviderKind::Store => {
                return Err(EmbedError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("store {} not found", path.display()),
                )))
            }
            Some(_) => Some(RwLock::new(EmbeddingStore::new(Self::header_for(&config)))),
            None => None,
        };
        Ok(Self { config, backend, cache, dirty: AtomicBool::new(false), remote_calls: AtomicUsize::new(0) })
    }

    fn header_for(config: &ProviderConfig) -> StoreHeader {
        StoreHeader {
            model_id: config.model_id.clone(),
            dim: config.dim,
            normalized: config.kind == ProviderKind::Mock,
        }
    }

    /// Adds an in-memory cache when no store path is configured.
    pub fn with_memory_cache(mut self) -> Self {
        if self.cache.is_none() {
            self.cache = Some(RwLock::new(EmbeddingStore::new(Self::header_for(&self.config))));
        }
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Number of HTTP requests issued so far.
    pub fn remote_calls(&self) -> usize {
        self.remote_calls.load(Ordering::Relaxed)
    }

    /// The sentence as the encoder sees it: cut to the in-context prefix
    /// when `truncate_to_context` is set.
    pub fn prepare<'a>(&self, s: &'a CellSentence) -> std::borrow::Cow<'a, [String]> {
        if self.config.truncate_to_context {
            let c = in_context_count(s, &self.config.budget);
            std::borrow::Cow::Borrowed(&s.genes[..c])
        } else {
            std::borrow::Cow::Borrowed(&s.genes[..])
        }
    }

    /// Text sent to the HTTP backend.
    pub fn render(&self, s: &CellSentence) -> String {
        let tokens = self.prepare(s);
        let mut out = self.config.prompt_prefix.clone();
        out.push_str(&tokens.join(" "));
        out
    }

    /// One vector per sentence, in order. Cached keys are served from the
    /// store; misses are computed and written through.
    pub fn embed_batch(&self, sentences: &[CellSentence]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let keys: Vec<String> = sentences.iter().map(|s| store_key(&s.cell_id, &s.variant)).collect();
        let mut out: Vec<Option<EmbeddingVector>> = match &self.cache {
            Some(c) => {
                let c = c.read().expect("cache lock");
                keys.iter().map(|k| c.get_key(k).cloned()).collect()
            }
            None => vec![None; sentences.len()],
        };
        let missing: Vec<usize> = (0..sentences.len()).filter(|&i| out[i].is_none()).collect();
        if missing.is_empty() {
            return Ok(out.into_iter().map(Option::unwrap).collect());
        }
        if matches!(self.backend, Backend::Store) {
            let s = &sentences[missing[0]];
            return Err(EmbedError::MissingEmbedding { cell_id: s.cell_id.clone(), variant: s.variant.to_string() });
        }
        let todo: Vec<CellSentence> = missing.iter().map(|&i| sentences[i].clone()).collect();
        let fresh = self.encode(&todo)?;
        if let Some(c) = &self.cache {
            let mut c = c.write().expect("cache lock");
            for (&i, v) in missing.iter().zip(&fresh) {
                c.insert_key(keys[i].clone(), v.clone())?;
            }
            self.dirty.store(true, Ordering::Relaxed);
        }
        for (i, v) in missing.into_iter().zip(fresh) {
            out[i] = Some(v);
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    /// Encodes without consulting or filling the cache.
    pub fn encode(&self, sentences: &[CellSentence]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        match &self.backend {
            Backend::Mock => {
                let (dim, seed) = (self.config.dim, self.config.seed);
                Ok(Exec::default().map(sentences, |s| mock_embed_tokens(&self.prepare(s), dim, seed)))
            }
            Backend::Http(h) => {
                let texts: Vec<String> = sentences.iter().map(|s| self.render(s)).collect();
                self.run_http(h, &texts)
            }
            Backend::Store => Err(EmbedError::Unsupported("store provider cannot encode new sentences".into())),
        }
    }

    /// Embeds free-standing strings verbatim (no prefix, no truncation).
    pub fn embed_bare(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        match &self.backend {
            Backend::Mock => {
                let (dim, seed) = (self.config.dim, self.config.seed);
                Ok(Exec::default().map(texts, |t| mock_embed_tokens(&mock_tokenize(t), dim, seed)))
            }
            Backend::Http(h) => self.run_http(h, texts),
            Backend::Store => Err(EmbedError::Unsupported("store provider cannot embed free text".into())),
        }
    }

    /// Batches of `batch_size` with at most `max_inflight` requests in flight.
    fn run_http(&self, h: &HttpEmbedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let chunks: Vec<&[String]> = texts.chunks(self.config.batch_size).collect();
        let results: Mutex<Vec<Option<Result<Vec<EmbeddingVector>, EmbedError>>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let workers = self.config.max_inflight.min(chunks.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() || failed.load(Ordering::SeqCst) {
                        break;
                    }
                    self.remote_calls.fetch_add(1, Ordering::Relaxed);
                    let r = h.embed_texts(chunks[i]);
                    if r.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    results.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results.into_inner().expect("results lock") {
            match r {
                Some(Ok(v)) => out.extend(v),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        if out.len() != texts.len() {
            return Err(EmbedError::InvalidResponse("batch aborted".into()));
        }
        Ok(out)
    }

    /// Persists the cache if it changed.
    pub fn flush(&self) -> Result<(), EmbedError> {
        if let (Some(path), Some(c)) = (&self.config.store, &self.cache) {
            if self.dirty.swap(false, Ordering::Relaxed) {
                c.read().expect("cache lock").save(path)?;
            }
        }
        Ok(())
    }

    /// Snapshot of the cache, if any.
    pub fn cache_snapshot(&self) -> Option<EmbeddingStore> {
        self.cache.as_ref().map(|c| c.read().expect("cache lock").clone())
    }
}
