//! Provider-agnostic chat completion gateway.
//!
//! [`Gateway`] wraps a [`CompletionBackend`] with the operational layers every
//! long annotation or evaluation run needs: a content-addressed on-disk
//! response cache, bounded concurrency, a request rate limit, and retries
//! with exponential backoff. Requests are decomposed into individual samples
//! so self-consistency runs only pay for the samples the cache is missing.

mod backend;
mod limiter;

pub use backend::{
    BackendError, CompletionBackend, LiveBackend, LiveConfig, MatchMode, ScriptEntry,
    ScriptMatcher, ScriptedBackend,
};
pub use limiter::{Clock, FakeClock, Semaphore, SystemClock, TokenBucket};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One chat completion request, possibly asking for several independent
/// samples of the same prompt (self-consistency).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub n_samples: u32,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model is empty".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(GatewayError::InvalidRequest(
                "last message must be a user message".into(),
            ));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::InvalidRequest("n_samples must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Where a response's samples came from. `Cache` means every sample was
/// served from disk without touching the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Live,
    Cache,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Exactly `n_samples` completions, in sample order.
    pub samples: Vec<String>,
    pub usage: Option<TokenUsage>,
    pub provenance: Provenance,
}

/// Content hash identifying one sample of one request in the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for byte in self.0 {
            write!(f, "{byte:02x}")?;
        }
        Ok(())
    }
}

/// Canonical form hashed into a cache key. Message contents are trimmed of
/// trailing whitespace so cosmetic prompt drift doesn't invalidate the cache.
#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model: &'a str,
    messages: Vec<(&'static str, &'a str)>,
    temperature: f64,
    max_output_tokens: u32,
    n_samples: u32,
    sample_index: u32,
}

/// Computes the cache key for sample `sample_index` of `request`.
pub fn cache_key(request: &CompletionRequest, sample_index: u32) -> CacheKey {
    let canonical = CanonicalRequest {
        model: &request.model,
        messages: request
            .messages
            .iter()
            .map(|m| (m.role.as_str(), m.content.trim_end()))
            .collect(),
        temperature: request.temperature,
        max_output_tokens: request.max_output_tokens,
        n_samples: request.n_samples,
        sample_index,
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    let digest = Sha256::digest(&bytes);
    CacheKey(digest.into())
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scripted backend miss: {0}")]
    ScriptMiss(String),
    #[error("backend rejected request{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Rejected {
        status: Option<u16>,
        message: String,
    },
    #[error("gave up after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("cache I/O error at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// On-disk response cache: one JSON file per (request, sample_index) under
/// the cache directory, named by the cache key hex digest.
struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CachedSample {
    text: String,
    model: String,
    temperature: f64,
    sample_index: u32,
    created_unix: u64,
}

impl ResponseCache {
    fn new(dir: PathBuf) -> Result<Self, GatewayError> {
        fs::create_dir_all(&dir).map_err(|source| GatewayError::Cache {
            path: dir.clone(),
            source,
        })?;
        Ok(ResponseCache { dir })
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn load(&self, key: &CacheKey) -> Option<String> {
        let path = self.path_for(key);
        let raw = fs::read_to_string(path).ok()?;
        let cached: CachedSample = serde_json::from_str(&raw).ok()?;
        Some(cached.text)
    }

    /// Writes atomically: temp file in the same directory, then rename, so a
    /// crashed run never leaves a half-written entry behind.
    fn store(
        &self,
        key: &CacheKey,
        request: &CompletionRequest,
        sample_index: u32,
        text: &str,
    ) -> Result<(), GatewayError> {
        let record = CachedSample {
            text: text.to_string(),
            model: request.model.clone(),
            temperature: request.temperature,
            sample_index,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let body = serde_json::to_vec(&record).expect("cache record serializes");
        let final_path = self.path_for(key);
        let tmp_path = self.dir.join(format!("{key}.tmp.{}", std::process::id()));
        let map_err = |source: std::io::Error, path: &Path| GatewayError::Cache {
            path: path.to_path_buf(),
            source,
        };
        fs::write(&tmp_path, &body).map_err(|e| map_err(e, &tmp_path))?;
        fs::rename(&tmp_path, &final_path).map_err(|e| map_err(e, &final_path))?;
        Ok(())
    }
}

/// Retry policy for transient backend failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per sample, including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with deterministic jitter derived from the cache
    /// key, so delays are reproducible without sharing RNG state.
    fn delay(&self, attempt: u32, key: &CacheKey) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_delay_ms);
        let seed = u64::from_le_bytes(key.0[..8].try_into().expect("8 bytes"));
        let jitter = seed.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(attempt) % (exp / 2 + 1);
        Duration::from_millis(exp / 2 + jitter)
    }
}

pub struct GatewayBuilder {
    backend: Arc<dyn CompletionBackend>,
    cache_dir: Option<PathBuf>,
    concurrency: usize,
    rate_limit_per_minute: Option<u32>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
}

impl GatewayBuilder {
    pub fn cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn no_cache(mut self) -> Self {
        self.cache_dir = None;
        self
    }

    pub fn concurrency(mut self, limit: usize) -> Self {
        self.concurrency = limit.max(1);
        self
    }

    pub fn rate_limit_per_minute(mut self, per_minute: u32) -> Self {
        self.rate_limit_per_minute = (per_minute > 0).then_some(per_minute);
        self
    }

    pub fn retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = policy;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayError> {
        let cache = self.cache_dir.map(ResponseCache::new).transpose()?;
        let limiter = self
            .rate_limit_per_minute
            .map(|q| TokenBucket::new(q, self.clock.as_ref()));
        Ok(Gateway {
            backend: self.backend,
            cache,
            limiter,
            semaphore: Semaphore::new(self.concurrency),
            retry: self.retry,
            clock: self.clock,
            transport_calls: AtomicU64::new(0),
        })
    }
}

/// The completion front door. Safe to share across worker threads.
pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    cache: Option<ResponseCache>,
    limiter: Option<TokenBucket>,
    semaphore: Semaphore,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    /// Backend invocations, counting each retry attempt. Cache hits never
    /// increment this.
    transport_calls: AtomicU64,
}

impl Gateway {
    pub fn builder(backend: Arc<dyn CompletionBackend>) -> GatewayBuilder {
        GatewayBuilder {
            backend,
            cache_dir: None,
            concurrency: 4,
            rate_limit_per_minute: None,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock),
        }
    }

    /// Number of backend invocations so far (including retries).
    pub fn transport_calls(&self) -> u64 {
        self.transport_calls.load(Ordering::SeqCst)
    }

    /// Completes `request`, serving each sample from the cache when possible
    /// and from the backend otherwise. The returned samples are in sample
    /// order regardless of where each came from.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let n = request.n_samples as usize;
        let mut samples: Vec<Option<String>> = vec![None; n];

        if let Some(cache) = &self.cache {
            for (i, slot) in samples.iter_mut().enumerate() {
                *slot = cache.load(&cache_key(request, i as u32));
            }
        }

        let mut any_transport = false;
        for i in 0..n {
            if samples[i].is_some() {
                continue;
            }
            any_transport = true;
            let text = self.fetch_sample(request, i as u32)?;
            if let Some(cache) = &self.cache {
                cache.store(&cache_key(request, i as u32), request, i as u32, &text)?;
            }
            samples[i] = Some(text);
        }

        let usage = if any_transport {
            self.backend
                .drain_usage()
                .map(|(prompt_tokens, completion_tokens)| TokenUsage {
                    prompt_tokens,
                    completion_tokens,
                })
        } else {
            None
        };

        Ok(CompletionResponse {
            samples: samples.into_iter().map(|s| s.expect("sample filled")).collect(),
            usage,
            provenance: if any_transport {
                self.backend.provenance()
            } else {
                Provenance::Cache
            },
        })
    }

    /// One sample through the semaphore, rate limiter, and retry loop.
    fn fetch_sample(&self, request: &CompletionRequest, index: u32) -> Result<String, GatewayError> {
        let _permit = self.semaphore.acquire();
        let key = cache_key(request, index);
        let mut attempt = 0;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete_sample(request, index) {
                Ok(text) => return Ok(text),
                Err(err) if !err.retryable => {
                    // The scripted backend's only fatal error is a miss.
                    return Err(if self.backend.provenance() == Provenance::Scripted {
                        GatewayError::ScriptMiss(err.message)
                    } else {
                        GatewayError::Rejected {
                            status: err.status,
                            message: err.message,
                        }
                    });
                }
                Err(err) => {
                    attempt += 1;
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::RetriesExhausted {
                            attempts: attempt,
                            last_error: err.to_string(),
                        });
                    }
                    self.clock.sleep(self.retry.delay(attempt, &key));
                }
            }
        }
    }
}
