//! Chat-completion and embedding boundary with record/replay cassettes.
//!
//! Every model call in the toolkit goes through a [`Gateway`]. In live mode it
//! forwards to a [`Provider`] with retry and a concurrency cap; in record mode
//! it additionally appends each exchange to a cassette; in replay mode it
//! answers from the cassette by request digest and never touches the network.

mod cassette;
mod http;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cassette::{Cassette, CassetteMeta, CassetteRecord, CASSETTE_FILE};
pub use http::{HttpProvider, HttpProviderConfig};
pub use scripted::{hashing_embedding, ScriptedProvider, HASHING_DIM};

use crate::digest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by provider")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("no recorded response for request {digest}")]
    CassetteMiss { digest: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Timeout | GatewayError::RateLimited { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// An image attached to a message. Only the digest takes part in request
/// identity, so the same bytes at different paths replay identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageAttachment>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into(), images: Vec::new() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into(), images: Vec::new() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into(), images: Vec::new() }
    }

    pub fn with_images(mut self, images: Vec<ImageAttachment>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f32,
    pub top_p: f32,
    pub max_tokens: u32,
}

impl DecodingParams {
    /// Sampling settings for diverse generation (query drafting).
    pub const CREATIVE: DecodingParams = DecodingParams { temperature: 1.0, top_p: 1.0, max_tokens: 2048 };
    /// Greedy settings for verifiers and judges.
    pub const STABLE: DecodingParams = DecodingParams { temperature: 0.0, top_p: 1.0, max_tokens: 1024 };
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams::STABLE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub params: DecodingParams,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

#[derive(Serialize)]
struct DigestMessage<'a> {
    role: Role,
    content: &'a str,
    images: Vec<&'a str>,
}

#[derive(Serialize)]
struct DigestView<'a> {
    kind: &'static str,
    model_id: &'a str,
    messages: Vec<DigestMessage<'a>>,
    params: &'a DecodingParams,
    stop_sequences: &'a [String],
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>, params: DecodingParams) -> Self {
        ChatRequest { model_id: model_id.into(), messages, params, stop_sequences: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidInput("request has no messages".into()));
        }
        if self.stop_sequences.iter().any(|s| s.is_empty()) {
            return Err(GatewayError::InvalidInput("empty stop sequence".into()));
        }
        Ok(())
    }

    /// Identity of the request for cassette lookup: model, messages with image
    /// references reduced to content digests, decoding params and stops.
    pub fn digest(&self) -> String {
        let view = DigestView {
            kind: "chat",
            model_id: &self.model_id,
            messages: self
                .messages
                .iter()
                .map(|m| DigestMessage {
                    role: m.role,
                    content: &m.content,
                    images: m.images.iter().map(|i| i.digest.as_str()).collect(),
                })
                .collect(),
            params: &self.params,
            stop_sequences: &self.stop_sequences,
        };
        sha256_hex(serde_json::to_vec(&view).expect("request serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model_id: String,
    pub input: String,
}

impl EmbedRequest {
    pub fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_vec(&("embed", &self.model_id, &self.input)).expect("request serializes"),
        )
    }
}

/// A chat/embedding backend.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError>;
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f32>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TelemetrySnapshot {
    pub calls: u64,
    pub attempts: u64,
    pub retries: u64,
    pub last_attempts: u64,
    pub replay_hits: u64,
    pub replay_misses: u64,
}

#[derive(Default)]
struct Telemetry {
    calls: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
    last_attempts: AtomicU64,
    replay_hits: AtomicU64,
    replay_misses: AtomicU64,
}

struct Limiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(cap: usize) -> Self {
        Limiter { cap: cap.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Backend {
    Live(Arc<dyn Provider>),
    Record { inner: Arc<dyn Provider>, cassette: Mutex<Cassette> },
    Replay(Mutex<Cassette>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

pub struct Gateway {
    backend: Backend,
    retry: RetryPolicy,
    limiter: Limiter,
    telemetry: Telemetry,
}

impl Gateway {
    pub fn live(provider: Arc<dyn Provider>) -> Self {
        Self::with_backend(Backend::Live(provider))
    }

    /// Forward to `provider` and append every exchange to a new cassette in `dir`.
    pub fn record(
        provider: Arc<dyn Provider>,
        dir: impl AsRef<std::path::Path>,
    ) -> Result<Self, GatewayError> {
        let cassette = Cassette::create(dir.as_ref(), provider.name())?;
        Ok(Self::with_backend(Backend::Record { inner: provider, cassette: Mutex::new(cassette) }))
    }

    /// Answer exclusively from the cassette in `dir`.
    pub fn replay(dir: impl AsRef<std::path::Path>) -> Result<Self, GatewayError> {
        let cassette = Cassette::open(dir.as_ref())?;
        Ok(Self::with_backend(Backend::Replay(Mutex::new(cassette))))
    }

    fn with_backend(backend: Backend) -> Self {
        Gateway {
            backend,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(8),
            telemetry: Telemetry::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, cap: usize) -> Self {
        self.limiter = Limiter::new(cap);
        self
    }

    pub fn mode(&self) -> GatewayMode {
        match self.backend {
            Backend::Live(_) => GatewayMode::Live,
            Backend::Record { .. } => GatewayMode::Record,
            Backend::Replay(_) => GatewayMode::Replay,
        }
    }

    /// Cassette identity, or `"live"` without one.
    pub fn cassette_id(&self) -> String {
        match &self.backend {
            Backend::Live(_) => "live".into(),
            Backend::Record { cassette, .. } | Backend::Replay(cassette) => {
                cassette.lock().unwrap().meta().id.clone()
            }
        }
    }

    /// Timestamp for provenance. With a cassette this is the cassette creation
    /// time so that recorded and replayed runs produce identical records.
    pub fn now(&self) -> String {
        match &self.backend {
            Backend::Live(_) => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Backend::Record { cassette, .. } | Backend::Replay(cassette) => {
                cassette.lock().unwrap().meta().created_at.clone()
            }
        }
    }

    pub fn telemetry(&self) -> TelemetrySnapshot {
        let t = &self.telemetry;
        TelemetrySnapshot {
            calls: t.calls.load(Ordering::Relaxed),
            attempts: t.attempts.load(Ordering::Relaxed),
            retries: t.retries.load(Ordering::Relaxed),
            last_attempts: t.last_attempts.load(Ordering::Relaxed),
            replay_hits: t.replay_hits.load(Ordering::Relaxed),
            replay_misses: t.replay_misses.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        self.telemetry.calls.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            Backend::Live(p) => self.with_retries(|| p.complete(req)),
            Backend::Record { inner, cassette } => {
                let text = self.with_retries(|| inner.complete(req))?;
                cassette.lock().unwrap().append(CassetteRecord::chat(req, &text))?;
                Ok(text)
            }
            Backend::Replay(cassette) => {
                let digest = req.digest();
                let hit = cassette.lock().unwrap().take_chat(&digest);
                self.replay_result(hit, digest)
            }
        }
    }

    pub fn embed(&self, model_id: &str, text: &str) -> Result<Vec<f32>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidInput("cannot embed empty text".into()));
        }
        let req = EmbedRequest { model_id: model_id.to_owned(), input: text.to_owned() };
        self.telemetry.calls.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            Backend::Live(p) => self.with_retries(|| p.embed(&req)),
            Backend::Record { inner, cassette } => {
                let v = self.with_retries(|| inner.embed(&req))?;
                cassette.lock().unwrap().append(CassetteRecord::embed(&req, &v))?;
                Ok(v)
            }
            Backend::Replay(cassette) => {
                let digest = req.digest();
                let hit = cassette.lock().unwrap().take_embed(&digest);
                self.replay_result(hit, digest)
            }
        }
    }

    fn replay_result<T>(&self, hit: Option<T>, digest: String) -> Result<T, GatewayError> {
        match hit {
            Some(v) => {
                self.telemetry.replay_hits.fetch_add(1, Ordering::Relaxed);
                Ok(v)
            }
            None => {
                self.telemetry.replay_misses.fetch_add(1, Ordering::Relaxed);
                Err(GatewayError::CassetteMiss { digest })
            }
        }
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let _permit = self.limiter.acquire();
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.telemetry.attempts.fetch_add(1, Ordering::Relaxed);
            let result = call();
            match result {
                Err(e) if e.is_retryable() && attempt < max => {
                    self.telemetry.retries.fetch_add(1, Ordering::Relaxed);
                    let mut delay = self.retry.backoff(attempt);
                    if let GatewayError::RateLimited { retry_after_ms: Some(ms) } = e {
                        delay = delay.max(Duration::from_millis(ms)).min(self.retry.max_backoff);
                    }
                    tracing::warn!(attempt, ?delay, error = %e, "retrying model call");
                    std::thread::sleep(delay);
                }
                other => {
                    self.telemetry.last_attempts.store(attempt as u64, Ordering::Relaxed);
                    return other;
                }
            }
        }
    }
}
