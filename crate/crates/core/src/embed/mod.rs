//! Fixed-dimension embeddings for (cell, variant) keys.
//!
//! Vectors come from one of three backends (a JSONL store on disk, an HTTP
//! embeddings endpoint, or a deterministic hashed bag-of-words mock) behind a
//! single [`Provider`] that batches requests and writes results through to a
//! store-backed cache.

mod http;
mod mock;
mod provider;
mod store;
mod vector;

use thiserror::Error;

pub use http::{EmbeddingsRequest, EmbeddingsResponse, HttpEmbedder, RetryPolicy};
pub use mock::{mock_embed, mock_embed_tokens, mock_tokenize};
pub use provider::{Provider, ProviderConfig, ProviderKind, DEFAULT_PROMPT_PREFIX, EMBED_KEY_ENV};
pub use store::{store_key, EmbeddingStore, StoreHeader};
pub use vector::{cosine, EmbeddingVector};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no embedding for cell {cell_id:?} variant {variant}")]
    MissingEmbedding { cell_id: String, variant: String },
    #[error("duplicate store key {0:?}")]
    DuplicateKey(String),
    #[error("transport failure after {attempts} attempts: {msg}")]
    Transport { attempts: usize, msg: String },
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("store line {line}: {msg}")]
    StoreFormat { line: usize, msg: String },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
