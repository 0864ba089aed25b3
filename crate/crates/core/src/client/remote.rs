//! HTTP transport for OpenAI-style `/chat/completions` endpoints.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::limit::TokenBucket;
use super::{resolve_image, ChatRequest, ClientError, TokenUsage};
use crate::prompting::Part;

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    5
}
fn default_inflight() -> usize {
    4
}
fn default_backoff() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`; `/chat/completions` is
    /// appended.
    pub base_url: String,
    /// Name of the environment variable holding the API key. When unset or
    /// empty no Authorization header is sent.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// First retry delay; each further retry doubles it.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_inflight: default_inflight(),
            requests_per_minute: None,
            backoff_base_ms: default_backoff(),
        }
    }

    /// Delay before retry number `attempt` (0-based). Strictly increasing.
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(
            self.backoff_base_ms
                .max(1)
                .saturating_mul(1 << attempt.min(20)),
        )
    }
}

pub(super) struct RemoteTransport {
    config: RemoteConfig,
    endpoint: String,
    http: Client,
    api_key: Option<String>,
    bucket: Option<TokenBucket>,
}

/// Builds the JSON body for a request. Images become base64 data URIs.
pub(super) fn request_body(req: &ChatRequest) -> Result<Value, ClientError> {
    let mut content = Vec::with_capacity(req.prompt.parts.len());
    for part in &req.prompt.parts {
        match part {
            Part::Text(t) => content.push(json!({"type": "text", "text": t})),
            Part::Image(r) => {
                let img = resolve_image(r)?;
                content.push(json!({"type": "image_url", "image_url": {"url": img.url}}));
            }
        }
    }
    let mut messages = Vec::new();
    if let Some(sys) = &req.system {
        messages.push(json!({"role": "system", "content": sys}));
    }
    messages.push(json!({"role": "user", "content": content}));
    let mut body = json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.decoding.temperature,
        "max_tokens": req.decoding.max_tokens,
    });
    if let Some(seed) = req.decoding.seed {
        body["seed"] = json!(seed);
    }
    Ok(body)
}

fn extract_text(body: &Value) -> Result<(String, Option<TokenUsage>), ClientError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ClientError::Decode("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(ClientError::Decode(format!("unexpected content {other}"))),
    };
    let usage = body.get("usage").and_then(|u| {
        let get = |k: &str| u.get(k).and_then(Value::as_u64);
        Some(TokenUsage {
            prompt_tokens: get("prompt_tokens")?,
            completion_tokens: get("completion_tokens").unwrap_or(0),
            total_tokens: get("total_tokens").unwrap_or(0),
        })
    });
    Ok((text, usage))
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    let v = resp
        .headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?;
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|s| *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn is_retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

impl RemoteTransport {
    pub(super) fn new(config: &RemoteConfig) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ClientError::Transport {
                status: None,
                attempts: 0,
                message: format!("cannot build HTTP client: {e}"),
            })?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(Self {
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            config: config.clone(),
            http,
            api_key,
            bucket: config.requests_per_minute.map(TokenBucket::per_minute),
        })
    }

    /// Sends with retries. Returns the text, usage and the number of retries
    /// spent.
    pub(super) fn send(
        &self,
        req: &ChatRequest,
    ) -> Result<(String, Option<TokenUsage>, u32), ClientError> {
        let body = request_body(req)?;
        let mut attempt: u32 = 0;
        loop {
            if let Some(b) = &self.bucket {
                b.acquire();
            }
            let mut rb = self.http.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                rb = rb.bearer_auth(key);
            }
            let (status, message, server_delay) = match rb.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let value: Value = resp
                            .json()
                            .map_err(|e| ClientError::Decode(e.to_string()))?;
                        let (text, usage) = extract_text(&value)?;
                        return Ok((text, usage, attempt));
                    }
                    let delay = retry_after(&resp);
                    let text = resp.text().unwrap_or_default();
                    if !is_retryable(status) {
                        return Err(ClientError::Http {
                            status: status.as_u16(),
                            body: text.chars().take(500).collect(),
                        });
                    }
                    (Some(status.as_u16()), text, delay)
                }
                Err(e) => (e.status().map(|s| s.as_u16()), e.to_string(), None),
            };
            if attempt >= self.config.max_retries {
                return Err(ClientError::Transport {
                    status,
                    attempts: attempt + 1,
                    message: message.chars().take(500).collect(),
                });
            }
            let wait = self
                .config
                .backoff(attempt)
                .max(server_delay.unwrap_or_default());
            log::warn!(
                "request to {} failed (status {:?}), retry {} in {:?}",
                self.endpoint,
                status,
                attempt + 1,
                wait
            );
            std::thread::sleep(wait);
            attempt += 1;
        }
    }
}
