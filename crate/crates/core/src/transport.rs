//! Blocking JSON-over-HTTP POST with bounded retries.

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Retries transport errors, 429 and 5xx with exponential backoff:
/// `base_delay_ms * 2^i` before retry `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 1000, timeout_secs: 120 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

#[derive(Debug)]
pub(crate) enum PostError {
    /// Retryable failures exhausted the policy.
    Exhausted { attempts: usize, last: String },
    /// A non-retryable HTTP status.
    Status { status: u16, body: String },
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(retry.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, retry }
    }

    /// POSTs `body` and returns the raw response text of a 2xx reply.
    pub fn post(&self, url: &str, bearer: Option<&str>, body: &serde_json::Value) -> Result<String, PostError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(key) = bearer {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let failure = match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    if status != 429 && status < 500 {
                        return Err(PostError::Status { status, body: text });
                    }
                    format!("HTTP {status}: {text}")
                }
                Err(e) => e.to_string(),
            };
            if attempts > self.retry.max_retries as usize {
                return Err(PostError::Exhausted { attempts, last: failure });
            }
            log::debug!("POST {url} failed ({failure}); retry {attempts}");
            std::thread::sleep(self.retry.delay(attempts as u32 - 1));
        }
    }
}
