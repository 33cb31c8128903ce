//! Completion backends: the live HTTP provider and the deterministic
//! scripted replayer used by tests, fixtures, and offline runs.

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, Provenance};

/// Error surfaced by a single backend call. `retryable` tells the gateway
/// whether the call is worth repeating (timeouts, 429s, 5xx) or hopeless
/// (auth failures, malformed requests, script misses).
#[derive(Debug, Clone)]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
    /// HTTP status when one was received.
    pub status: Option<u16>,
}

impl BackendError {
    pub fn retryable(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: true,
            status: None,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: false,
            status: None,
        }
    }
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.status {
            Some(code) => write!(f, "backend returned HTTP {code}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for BackendError {}

/// A source of completion samples. Implementations return one sample per
/// call; the gateway layers caching, retries, rate limiting, and concurrency
/// control on top.
pub trait CompletionBackend: Send + Sync {
    /// Produces the completion text for sample `sample_index` of `request`.
    fn complete_sample(
        &self,
        request: &CompletionRequest,
        sample_index: u32,
    ) -> Result<String, BackendError>;

    /// Provenance tag recorded on responses served by this backend.
    fn provenance(&self) -> Provenance;

    /// Token usage accumulated since the last drain, when the backend reports
    /// it. The scripted backend never does.
    fn drain_usage(&self) -> Option<(u64, u64)> {
        None
    }
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// The whole prompt transcript must equal `text`.
    Exact,
    /// The prompt transcript must contain `text` as a substring.
    Contains,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptMatcher {
    pub mode: MatchMode,
    pub text: String,
}

/// One scripted exchange: a matcher plus the responses it hands out in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: ScriptMatcher,
    pub responses: Vec<String>,
}

/// Replays canned responses keyed on the prompt text.
///
/// The match surface is the request *transcript*: every message's content
/// joined with a single `\n`, in message order. Entries are tried in file
/// order and the first match wins. Each entry keeps a cursor and hands out
/// its responses in order, repeating the last one once exhausted. Requests
/// with `temperature == 0` are served the response at `sample_index` without
/// advancing the cursor, so identical greedy requests replay identically.
///
/// A request that matches no entry is a hard, non-retryable error: scripted
/// runs must be airtight about the prompts they expect.
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    cursors: Vec<Mutex<usize>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, String> {
        for (i, e) in entries.iter().enumerate() {
            if e.responses.is_empty() {
                return Err(format!("script entry {i} has no responses"));
            }
            if e.matcher.text.is_empty() {
                return Err(format!("script entry {i} has an empty match text"));
            }
        }
        let cursors = entries.iter().map(|_| Mutex::new(0)).collect();
        Ok(ScriptedBackend { entries, cursors })
    }

    /// Loads a script from JSONL: one [`ScriptEntry`] object per line.
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = fs::read_to_string(path)
            .map_err(|e| format!("cannot read script {}: {e}", path.display()))?;
        let mut entries = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| format!("{}:{}: bad script entry: {e}", path.display(), lineno + 1))?;
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(format!("script {} has no entries", path.display()));
        }
        ScriptedBackend::new(entries)
    }

    /// The text a request is matched against.
    pub fn transcript(request: &CompletionRequest) -> String {
        request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn matches(matcher: &ScriptMatcher, transcript: &str) -> bool {
        match matcher.mode {
            MatchMode::Exact => transcript == matcher.text,
            MatchMode::Contains => transcript.contains(&matcher.text),
        }
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete_sample(
        &self,
        request: &CompletionRequest,
        sample_index: u32,
    ) -> Result<String, BackendError> {
        let transcript = Self::transcript(request);
        for (idx, entry) in self.entries.iter().enumerate() {
            if !Self::matches(&entry.matcher, &transcript) {
                continue;
            }
            let responses = &entry.responses;
            let pick = if request.temperature == 0.0 {
                (sample_index as usize).min(responses.len() - 1)
            } else {
                let mut cursor = self.cursors[idx].lock().unwrap();
                let pick = (*cursor).min(responses.len() - 1);
                *cursor += 1;
                pick
            };
            return Ok(responses[pick].clone());
        }
        let preview: String = transcript.chars().take(160).collect();
        Err(BackendError::fatal(format!(
            "no script entry matches request (transcript starts: {preview:?})"
        )))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Scripted
    }
}

// ---------------------------------------------------------------------------
// Live backend
// ---------------------------------------------------------------------------

/// Connection settings for an OpenAI-compatible chat completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full URL of the chat completions route.
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_api_key_env() -> String {
    "SKILLFORGE_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

/// Calls a chat-completions HTTP API. Each missing sample becomes one POST
/// with `n = 1`; the gateway handles retries and caching.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    /// (prompt_tokens, completion_tokens) accumulated since the last drain.
    usage: Mutex<(u64, u64)>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    n: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, String> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            format!(
                "live backend needs an API key in ${} (not set)",
                config.api_key_env
            )
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| format!("cannot build HTTP client: {e}"))?;
        Ok(LiveBackend {
            config,
            api_key,
            client,
            usage: Mutex::new((0, 0)),
        })
    }

    fn post(&self, request: &CompletionRequest) -> Result<(String, Option<(u64, u64)>), BackendError> {
        let wire = WireRequest {
            model: &request.model,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
            n: 1,
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&wire)
            .send()
            .map_err(|e| BackendError::retryable(format!("transport error: {e}")))?;

        let status = response.status();
        let body = response
            .text()
            .map_err(|e| BackendError::retryable(format!("cannot read response body: {e}")))?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(BackendError {
                message: body.chars().take(400).collect(),
                retryable,
                status: Some(status.as_u16()),
            });
        }
        let parsed: WireResponse = serde_json::from_str(&body).map_err(|e| {
            BackendError::fatal(format!("cannot parse provider response: {e}"))
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::fatal("provider returned no choices"))?;
        let usage = parsed
            .usage
            .map(|u| (u.prompt_tokens, u.completion_tokens));
        Ok((choice.message.content, usage))
    }
}

impl CompletionBackend for LiveBackend {
    fn complete_sample(
        &self,
        request: &CompletionRequest,
        _sample_index: u32,
    ) -> Result<String, BackendError> {
        let (text, usage) = self.post(request)?;
        if let Some((prompt, completion)) = usage {
            let mut acc = self.usage.lock().unwrap();
            acc.0 += prompt;
            acc.1 += completion;
        }
        Ok(text)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Live
    }

    fn drain_usage(&self) -> Option<(u64, u64)> {
        let mut acc = self.usage.lock().unwrap();
        let out = *acc;
        *acc = (0, 0);
        (out != (0, 0)).then_some(out)
    }
}
