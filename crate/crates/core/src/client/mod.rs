//! Executes rendered prompts against a chat-completions endpoint or a
//! built-in mock, with bounded concurrency, retries, rate limiting and a
//! content-addressed response cache.

mod cache;
mod image;
mod limit;
mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompting::{Part, RenderedPrompt};

pub use cache::{with_cache, CacheEntry, CacheStore, CachedBackend};
pub use image::{image_content_hash, resolve_image, sniff_media_type, ResolvedImage};
pub use limit::{InflightLimiter, TokenBucket};
pub use mock::{MalformedFormat, MockBehavior};
pub use remote::RemoteConfig;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport failed after {attempts} attempts (last status {}): {message}", status.map_or("none".to_string(), |s| s.to_string()))]
    Transport {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("cannot read image {path}: {message}")]
    Image { path: String, message: String },
    #[error("backend returned an empty completion")]
    EmptyResponse,
    #[error("cannot decode response: {0}")]
    Decode(String),
    #[error("mock backend needs a ranking hint for ranking prompts")]
    MissingHint,
}

impl ClientError {
    pub fn is_image_error(&self) -> bool {
        matches!(self, ClientError::Image { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
        }
    }
}

/// Ground truth handed to mock backends alongside a ranking request. Never
/// sent over the wire and not part of the cache key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingHint {
    pub candidates: Vec<String>,
    pub target_index: usize,
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model_id: String,
    /// Optional system preamble; at most one per request.
    pub system: Option<String>,
    pub prompt: RenderedPrompt,
    pub decoding: Decoding,
    pub hint: Option<RankingHint>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: RenderedPrompt, decoding: Decoding) -> Self {
        Self {
            model_id: model_id.into(),
            system: None,
            prompt,
            decoding,
            hint: None,
        }
    }

    pub fn with_hint(mut self, hint: RankingHint) -> Self {
        self.hint = Some(hint);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
    pub from_cache: bool,
    /// Retries spent before success.
    pub retries: u32,
}

/// Hex SHA-256 over the model id, the system preamble, every text part, the
/// content hash of every image part and the decoding parameters. Image
/// paths do not enter the key, only image bytes.
pub fn cache_key(
    model_id: &str,
    system: Option<&str>,
    prompt: &RenderedPrompt,
    decoding: &Decoding,
) -> Result<String, ClientError> {
    let mut h = Sha256::new();
    let field = |h: &mut Sha256, tag: u8, bytes: &[u8]| {
        h.update([tag]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(&mut h, b'v', b"vstrank-cache/1");
    field(&mut h, b'm', model_id.as_bytes());
    if let Some(s) = system {
        field(&mut h, b's', s.as_bytes());
    }
    for part in &prompt.parts {
        match part {
            Part::Text(t) => field(&mut h, b't', t.as_bytes()),
            Part::Image(r) => field(&mut h, b'i', &image_content_hash(r)?),
        }
    }
    field(&mut h, b'T', &decoding.temperature.to_bits().to_le_bytes());
    field(&mut h, b'M', &decoding.max_tokens.to_le_bytes());
    match decoding.seed {
        Some(s) => field(&mut h, b'S', &s.to_le_bytes()),
        None => field(&mut h, b'N', &[]),
    }
    Ok(hex::encode(h.finalize()))
}

pub fn request_key(req: &ChatRequest) -> Result<String, ClientError> {
    cache_key(
        &req.model_id,
        req.system.as_deref(),
        &req.prompt,
        &req.decoding,
    )
}

/// Scopes a request key to a backend namespace; an empty namespace leaves
/// the key unchanged.
pub fn namespaced_key(namespace: &str, key: &str) -> String {
    if namespace.is_empty() {
        return key.to_string();
    }
    let mut h = Sha256::new();
    h.update(namespace.as_bytes());
    h.update([0]);
    h.update(key.as_bytes());
    hex::encode(h.finalize())
}

/// Anything that can answer a chat request. Implementations are safe to
/// call from many threads at once.
pub trait Completer: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<CompletionResult, ClientError>;

    /// Upper bound on useful caller-side parallelism.
    fn max_inflight(&self) -> usize {
        1
    }

    /// Identifies what answers requests, so cached responses from one
    /// backend are never replayed for another serving the same model name.
    fn cache_namespace(&self) -> String {
        String::new()
    }
}

fn default_max_inflight() -> usize {
    4
}

/// Backend selection as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Remote(RemoteConfig),
    Mock {
        behavior: MockBehavior,
        #[serde(default = "default_max_inflight")]
        max_inflight: usize,
        /// Upper bound of a per-request pseudo-random delay in
        /// microseconds, used to scramble completion order.
        #[serde(default)]
        jitter_us: u64,
    },
}

impl BackendSpec {
    pub fn mock(behavior: MockBehavior) -> Self {
        BackendSpec::Mock {
            behavior,
            max_inflight: default_max_inflight(),
            jitter_us: 0,
        }
    }

    pub fn max_inflight(&self) -> usize {
        match self {
            BackendSpec::Remote(r) => r.max_inflight,
            BackendSpec::Mock { max_inflight, .. } => *max_inflight,
        }
        .max(1)
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, BackendSpec::Mock { .. })
    }
}

enum Transport {
    Remote(remote::RemoteTransport),
    Mock(mock::MockTransport),
}

/// Call counters for one backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BackendStats {
    pub calls: u64,
    pub retries: u64,
    pub failures: u64,
    pub peak_inflight: usize,
}

/// A backend built from a [`BackendSpec`].
pub struct Backend {
    transport: Transport,
    limiter: InflightLimiter,
    calls: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    namespace: String,
}

impl Backend {
    pub fn from_spec(spec: &BackendSpec) -> Result<Self, ClientError> {
        let transport = match spec {
            BackendSpec::Remote(cfg) => Transport::Remote(remote::RemoteTransport::new(cfg)?),
            BackendSpec::Mock {
                behavior,
                jitter_us,
                ..
            } => Transport::Mock(mock::MockTransport::new(behavior.clone(), *jitter_us)),
        };
        let namespace = match spec {
            BackendSpec::Remote(cfg) => format!("remote:{}", cfg.base_url.trim_end_matches('/')),
            BackendSpec::Mock { behavior, .. } => format!(
                "mock:{}",
                serde_json::to_string(behavior).expect("behavior serializes")
            ),
        };
        Ok(Self {
            namespace,
            transport,
            limiter: InflightLimiter::new(spec.max_inflight()),
            calls: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        })
    }

    pub fn stats(&self) -> BackendStats {
        BackendStats {
            calls: self.calls.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            failures: self.failures.load(Ordering::SeqCst),
            peak_inflight: self.limiter.peak(),
        }
    }
}

impl Completer for Backend {
    fn complete(&self, req: &ChatRequest) -> Result<CompletionResult, ClientError> {
        let _permit = self.limiter.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let outcome = match &self.transport {
            Transport::Remote(r) => r.send(req),
            Transport::Mock(m) => m.answer(req).map(|text| (text, None, 0)),
        };
        match outcome {
            Ok((text, usage, retries)) => {
                self.retries.fetch_add(u64::from(retries), Ordering::SeqCst);
                if text.trim().is_empty() {
                    self.failures.fetch_add(1, Ordering::SeqCst);
                    return Err(ClientError::EmptyResponse);
                }
                Ok(CompletionResult {
                    text,
                    latency_ms: started.elapsed().as_millis() as u64,
                    token_usage: usage,
                    from_cache: false,
                    retries,
                })
            }
            Err(e) => {
                if let ClientError::Transport { attempts, .. } = &e {
                    self.retries
                        .fetch_add(u64::from(attempts.saturating_sub(1)), Ordering::SeqCst);
                }
                self.failures.fetch_add(1, Ordering::SeqCst);
                Err(e)
            }
        }
    }

    fn max_inflight(&self) -> usize {
        self.limiter.max()
    }

    fn cache_namespace(&self) -> String {
        self.namespace.clone()
    }
}

impl<C: Completer + ?Sized> Completer for std::sync::Arc<C> {
    fn complete(&self, req: &ChatRequest) -> Result<CompletionResult, ClientError> {
        (**self).complete(req)
    }

    fn max_inflight(&self) -> usize {
        (**self).max_inflight()
    }

    fn cache_namespace(&self) -> String {
        (**self).cache_namespace()
    }
}
