//! Chat-completion client: an OpenAI-compatible HTTP backend, a scripted
//! backend for deterministic runs, and an [`Agent`] wrapper that records a
//! transcript entry for every call.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("provider error after {retries} retries (last status {status:?}): {message}")]
    Provider {
        status: Option<u16>,
        retries: u32,
        message: String,
    },
    #[error("script exhausted: no remaining entry matches the request")]
    ScriptExhausted,
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.last() {
            None => Err(LlmError::Request("no messages".into())),
            Some(m) if m.role != Role::User => Err(LlmError::Request("last message must come from the user".into())),
            _ if self.temperature < 0.0 || self.temperature.is_nan() => {
                Err(LlmError::Request("temperature must be >= 0".into()))
            }
            _ if self.max_tokens == 0 => Err(LlmError::Request("max_tokens must be positive".into())),
            _ => Ok(()),
        }
    }

    fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    /// Transient failures retried before this response arrived.
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substring that must occur in the last user message.
    pub matcher: String,
    pub reply: String,
}

impl ScriptEntry {
    pub fn new(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: matcher.into(),
            reply: reply.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpOpenaiCompatible,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_api_key_env_var")]
    pub api_key_env_var: String,
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptEntry>,
}

fn default_api_key_env_var() -> String {
    "OPENAI_API_KEY".into()
}
fn default_request_timeout_ms() -> u64 {
    120_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_backoff_ms() -> u64 {
    500
}

impl ProviderConfig {
    pub fn http(base_url: impl Into<String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::HttpOpenaiCompatible,
            base_url: Some(base_url.into()),
            api_key_env_var: default_api_key_env_var(),
            request_timeout_ms: default_request_timeout_ms(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_retry_backoff_ms(),
            script: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.kind == ProviderKind::HttpOpenaiCompatible && self.base_url.as_deref().is_none_or(str::is_empty) {
            return Err(LlmError::Config("http provider requires base_url".into()));
        }
        if self.kind == ProviderKind::Scripted && self.script.is_empty() {
            return Err(LlmError::Config("scripted provider requires a non-empty script".into()));
        }
        if self.request_timeout_ms == 0 || self.retry_backoff_ms == 0 {
            return Err(LlmError::Config("timeouts and backoff must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the configuration of a scripted provider.
pub fn scripted_provider(script: Vec<ScriptEntry>) -> Result<ProviderConfig, LlmError> {
    let config = ProviderConfig {
        kind: ProviderKind::Scripted,
        base_url: None,
        api_key_env_var: default_api_key_env_var(),
        request_timeout_ms: default_request_timeout_ms(),
        max_retries: 0,
        retry_backoff_ms: default_retry_backoff_ms(),
        script,
    };
    config.validate()?;
    Ok(config)
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;

    /// Number of `complete` calls served so far, successful or not.
    fn calls(&self) -> usize;
}

/// Instantiates the backend a configuration describes. Scripted backends
/// carry single-use state, so each call yields a fresh script.
pub fn connect(config: &ProviderConfig) -> Result<Arc<dyn ChatBackend>, LlmError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::HttpOpenaiCompatible => Arc::new(HttpBackend::new(config.clone())),
        ProviderKind::Scripted => Arc::new(ScriptedBackend::new(config.script.clone())),
    })
}

/// First-match, single-use canned replies keyed on substrings of the last
/// user message.
pub struct ScriptedBackend {
    entries: Mutex<Vec<(ScriptEntry, bool)>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        ScriptedBackend {
            entries: Mutex::new(script.into_iter().map(|e| (e, false)).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn remaining(&self) -> usize {
        self.entries.lock().unwrap().iter().filter(|(_, used)| !used).count()
    }
}

impl fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("remaining", &self.remaining())
            .finish()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let prompt = request.last_user_message();
        let mut entries = self.entries.lock().unwrap();
        let (entry, used) = entries
            .iter_mut()
            .find(|(e, used)| !*used && prompt.contains(&e.matcher))
            .ok_or(LlmError::ScriptExhausted)?;
        *used = true;
        Ok(CompletionResponse {
            text: entry.reply.clone(),
            prompt_tokens: approx_tokens(prompt),
            completion_tokens: approx_tokens(&entry.reply),
            latency_ms: 0,
            retries: 0,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// `POST {base_url}/chat/completions` with exponential backoff on transient
/// failures (transport errors, timeouts, 429, 5xx).
pub struct HttpBackend {
    config: ProviderConfig,
    agent: ureq::Agent,
    calls: AtomicUsize,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(CompletionResponse),
    Transient(Option<u16>, String),
    Fatal(Option<u16>, String),
}

impl HttpBackend {
    pub fn new(config: ProviderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.request_timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            config,
            agent,
            calls: AtomicUsize::new(0),
        }
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.as_deref().unwrap_or_default();
        format!("{}/chat/completions", base.trim_end_matches('/'))
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut builder = self.agent.post(self.endpoint()).content_type("application/json");
        if let Ok(key) = std::env::var(&self.config.api_key_env_var) {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let started = Instant::now();
        let mut response = match builder.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(None, e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(Some(status), e.to_string()),
        };
        match status {
            200..=299 => {}
            429 | 500..=599 => return Attempt::Transient(Some(status), truncate(&text)),
            _ => return Attempt::Fatal(Some(status), truncate(&text)),
        }
        let wire: WireResponse = match serde_json::from_str(&text) {
            Ok(w) => w,
            Err(e) => return Attempt::Fatal(Some(status), format!("undecodable response: {e}")),
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Attempt::Fatal(Some(status), "response has no choices".into());
        };
        let usage = wire.usage.unwrap_or(WireUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Attempt::Done(CompletionResponse {
            text: choice.message.content.unwrap_or_default(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            retries: 0,
        })
    }
}

fn truncate(text: &str) -> String {
    text.chars().take(500).collect()
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let body = serde_json::to_string(&WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stop: &request.stop_sequences,
        })
        .map_err(|e| LlmError::Request(e.to_string()))?;

        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(mut response) => {
                    response.retries = retries;
                    return Ok(response);
                }
                Attempt::Fatal(status, message) => {
                    return Err(LlmError::Provider {
                        status,
                        retries,
                        message,
                    })
                }
                Attempt::Transient(status, message) => {
                    if retries >= self.config.max_retries {
                        return Err(LlmError::Provider {
                            status,
                            retries,
                            message,
                        });
                    }
                    let backoff = self.config.retry_backoff_ms.saturating_mul(1u64 << retries.min(20));
                    std::thread::sleep(Duration::from_millis(backoff));
                    retries += 1;
                }
            }
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage_label: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
    /// Refinement attempt within the stage; 0 for the first call.
    pub attempt_index: u32,
}

pub type Transcript = Vec<TranscriptEntry>;

/// One logical model endpoint (reasoning or coding) bound to a backend.
#[derive(Clone)]
pub struct Agent {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stage_temperatures: BTreeMap<String, f64>,
    backend: Arc<dyn ChatBackend>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("model_id", &self.model_id)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(model_id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Agent {
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: 1024,
            stage_temperatures: BTreeMap::new(),
            backend,
        }
    }

    /// Agent over a fresh scripted backend.
    pub fn scripted(model_id: impl Into<String>, script: Vec<ScriptEntry>) -> Self {
        Agent::new(model_id, Arc::new(ScriptedBackend::new(script)))
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    /// Sends a single-turn prompt and appends the exchange to `transcript`.
    /// Failed calls are not recorded.
    pub fn ask(
        &self,
        stage: &str,
        attempt_index: u32,
        prompt: String,
        transcript: &mut Transcript,
    ) -> Result<String, LlmError> {
        let request = CompletionRequest {
            model_id: self.model_id.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.stage_temperatures.get(stage).copied().unwrap_or(self.temperature),
            max_tokens: self.max_tokens,
            stop_sequences: Vec::new(),
        };
        let response = self.backend.complete(&request)?;
        let text = response.text.clone();
        transcript.push(TranscriptEntry {
            stage_label: stage.to_string(),
            request,
            response,
            attempt_index,
        });
        Ok(text)
    }
}
