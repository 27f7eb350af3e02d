use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{PromptSpec, RerankError};
use crate::transport::{JsonClient, PostError, RetryPolicy};

pub const CHAT_KEY_ENV: &str = "CELLSENSE_CHAT_KEY";

fn default_key_env() -> String {
    CHAT_KEY_ENV.into()
}
fn default_true() -> bool {
    true
}
fn default_inflight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_key_env")]
    pub auth_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Send a JSON schema with the request; otherwise rely on the prompt
    /// instruction and strict parsing.
    #[serde(default = "default_true")]
    pub schema_mode: bool,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
}

impl ChatProviderConfig {
    pub fn new(endpoint: &str, model_id: &str) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            auth_env: default_key_env(),
            retry: RetryPolicy::default(),
            schema_mode: true,
            max_inflight: default_inflight(),
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if self.endpoint.trim().is_empty() || self.model_id.trim().is_empty() {
            return Err(RerankError::Config("endpoint and model_id are required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(RerankError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_inflight == 0 {
            return Err(RerankError::Config("max_inflight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    /// Assistant message text.
    pub content: String,
    /// Serialized request, kept for digests.
    pub request_body: String,
}

pub trait ChatClient: Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &PromptSpec) -> Result<ChatReply, RerankError>;
}

pub struct HttpChatClient {
    config: ChatProviderConfig,
    client: JsonClient,
    key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: ChatProviderConfig) -> Result<Self, RerankError> {
        config.validate()?;
        let key = std::env::var(&config.auth_env).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{} is not set; sending chat requests without credentials", config.auth_env);
        }
        let client = JsonClient::new(config.retry);
        Ok(Self { config, client, key })
    }

    pub fn config(&self) -> &ChatProviderConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &PromptSpec) -> Value {
        let mut body = json!({
            "model": self.config.model_id,
            "temperature": self.config.temperature,
            "messages": [{ "role": "user", "content": prompt.text }],
        });
        if self.config.schema_mode {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": { "name": "answer", "strict": true, "schema": prompt.response_schema },
            });
        }
        body
    }
}

impl ChatClient for HttpChatClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, prompt: &PromptSpec) -> Result<ChatReply, RerankError> {
        let body = self.request_body(prompt);
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let text = self.client.post(&url, self.key.as_deref(), &body).map_err(|e| match e {
            PostError::Exhausted { attempts, last } => RerankError::Transport { attempts, msg: last },
            PostError::Status { status, body } => RerankError::Status { status, body },
        })?;
        let v: Value = serde_json::from_str(&text).map_err(|e| RerankError::InvalidResponse(e.to_string()))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| RerankError::InvalidResponse("missing choices[0].message.content".into()))?;
        Ok(ChatReply { content: content.to_owned(), request_body: body.to_string() })
    }
}

/// Strips a surrounding Markdown code fence, if any.
pub(crate) fn strip_fence(s: &str) -> &str {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        if let Some(inner) = rest.trim_end().strip_suffix("```") {
            return inner.trim();
        }
    }
    t
}

/// The `cell_type` of a JSON reply, if it names an allowed label.
pub fn parse_label_reply(content: &str, allowed: &[String]) -> Option<String> {
    let v: Value = serde_json::from_str(strip_fence(content)).ok()?;
    let label = v.get("cell_type")?.as_str()?.trim();
    allowed.iter().find(|a| a.as_str() == label).cloned()
}
