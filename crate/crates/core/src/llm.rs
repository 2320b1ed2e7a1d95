//! Provider-agnostic chat-completion client.
//!
//! Wire contract (OpenAI-compatible): `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role", "content"}], "temperature", "max_tokens", "seed"}`;
//! the reply text is `choices[0].message.content`.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == "user").map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

impl ChatResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        ChatResponse {
            choices: vec![ChatChoice {
                message: ChatMessage { role: "assistant".into(), content: text.into() },
            }],
        }
    }
}

/// Sampling parameters sent with every generation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams { temperature: 0.0, seed: 0, max_tokens: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, backoff_base_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_ref: String,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
    pub request_timeout_ms: u64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model_name: "gemini-1.5-flash".into(),
            api_key_ref: "QAFORGE_API_KEY".into(),
            max_concurrency: 4,
            retry: RetryPolicy::default(),
            request_timeout_ms: 60_000,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_concurrency < 1 {
            return Err(LlmError::Config("max_concurrency must be at least 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(LlmError::Config("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    /// Worth retrying: rate limits, server errors, timeouts.
    #[error("transient failure: {0}")]
    Transient(String),
    /// The endpoint could not be reached at all.
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("request rejected: {0}")]
    Fatal(String),
    #[error("invalid client configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transient(_) | LlmError::Unreachable(_))
    }
}

/// Anything that answers a chat request with the first message's text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> impl Future<Output = Result<String, LlmError>> + Send;
}

impl<B: ChatBackend> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> impl Future<Output = Result<String, LlmError>> + Send {
        (**self).complete(request)
    }
}

impl<B: ChatBackend> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> impl Future<Output = Result<String, LlmError>> + Send {
        (**self).complete(request)
    }
}

static JITTER_STREAM: AtomicU64 = AtomicU64::new(0);

fn jitter_factor() -> f64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    let mut rng = SplitMix64::new(nanos ^ JITTER_STREAM.fetch_add(1, Ordering::Relaxed));
    0.5 + rng.next_f64()
}

/// Backoff before retry number `attempt` (1-based): `base * 2^(attempt-1)`
/// scaled by a jitter factor in `[0.5, 1.5)`.
pub fn backoff_delay(policy: &RetryPolicy, attempt: u32) -> Duration {
    let exp = policy.backoff_base_ms.saturating_mul(1u64 << attempt.saturating_sub(1).min(20));
    Duration::from_millis((exp as f64 * jitter_factor()) as u64)
}

/// Calls `backend` until it succeeds, fails fatally, or `max_attempts` is spent.
pub async fn complete_with_retry<B: ChatBackend>(
    backend: &B,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<String, LlmError> {
    let mut attempt = 1;
    loop {
        match backend.complete(request).await {
            Ok(text) => return Ok(text),
            Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                log::debug!("attempt {attempt} failed ({e}); retrying");
                tokio::time::sleep(backoff_delay(policy, attempt)).await;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// HTTP implementation of [`ChatBackend`].
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatBackend {
    pub fn new(config: &LlmClientConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_ref).ok().filter(|k| !k.is_empty());
        Ok(HttpChatBackend {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(|e| {
            if e.is_connect() {
                LlmError::Unreachable(e.to_string())
            } else {
                LlmError::Transient(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(LlmError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(LlmError::Fatal(format!("HTTP {status}: {body}")));
        }
        let parsed: ChatResponse =
            response.json().await.map_err(|e| LlmError::Transient(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Transient("response has no choices".into()))
    }
}
