use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector};
use crate::transport::{JsonClient, PostError};
pub use crate::transport::RetryPolicy;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingsRequest {
    pub model: String,
    pub input: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingItem {
    pub index: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingsResponse {
    pub data: Vec<EmbeddingItem>,
}

/// Client for `POST {endpoint}/embeddings`.
pub struct HttpEmbedder {
    url: String,
    model_id: String,
    dim: usize,
    api_key: Option<String>,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model_id: &str, dim: usize, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            url: format!("{}/embeddings", endpoint.trim_end_matches('/')),
            model_id: model_id.to_owned(),
            dim,
            api_key,
            client: JsonClient::new(retry),
        }
    }

    /// One request; response vectors are reordered by `index` and validated.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::to_value(EmbeddingsRequest { model: self.model_id.clone(), input: texts.to_vec() })
            .map_err(|e| EmbedError::InvalidResponse(e.to_string()))?;
        let text = self.client.post(&self.url, self.api_key.as_deref(), &body).map_err(|e| match e {
            PostError::Exhausted { attempts, last } => EmbedError::Transport { attempts, msg: last },
            PostError::Status { status, body } => EmbedError::Status { status, body },
        })?;
        let resp: EmbeddingsResponse =
            serde_json::from_str(&text).map_err(|e| EmbedError::InvalidResponse(e.to_string()))?;
        decode_response(resp, texts.len(), self.dim)
    }
}

pub(crate) fn decode_response(resp: EmbeddingsResponse, n: usize, dim: usize) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if resp.data.len() != n {
        return Err(EmbedError::InvalidResponse(format!("expected {n} embeddings, got {}", resp.data.len())));
    }
    let mut slots: Vec<Option<EmbeddingVector>> = vec![None; n];
    for item in resp.data {
        if item.embedding.len() != dim {
            return Err(EmbedError::DimMismatch { expected: dim, got: item.embedding.len() });
        }
        let slot = slots
            .get_mut(item.index)
            .ok_or_else(|| EmbedError::InvalidResponse(format!("index {} out of range", item.index)))?;
        if slot.is_some() {
            return Err(EmbedError::InvalidResponse(format!("index {} repeated", item.index)));
        }
        *slot = Some(EmbeddingVector::new(item.embedding)?);
    }
    Ok(slots.into_iter().map(|s| s.expect("all indices filled")).collect())
}
