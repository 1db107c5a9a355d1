//! Chat-completion and embedding gateway with record/replay transcripts.
//!
//! Every request is reduced to a canonical JSON form (sorted keys, no
//! whitespace) and keyed by the SHA-256 of that form. In replay mode the
//! gateway answers exclusively from the transcript store and never touches
//! the backend.

mod gateway;
#[cfg(feature = "live")]
mod http;
mod store;

pub use gateway::{Gateway, RetryPolicy};
#[cfg(feature = "live")]
pub use http::OpenAiBackend;
pub use store::{TranscriptMode, TranscriptRecord, TranscriptStore};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "SYNTHPSYCH_API_KEY";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no API credential: set {API_KEY_ENV}")]
    MissingCredential,
    #[error("network failure after {attempts} attempt(s): {message}")]
    NetworkFailure { attempts: u32, message: String },
    #[error("provider rejected request: {0}")]
    Provider(String),
    #[error("no recorded response for request {digest}")]
    ReplayMiss { digest: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed provider payload: {0}")]
    Decode(String),
    #[error("transcript store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Re-prompt counter. Part of the cache key so that every attempt is
    /// recorded separately; never sent to the provider.
    pub attempt: u32,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            model_id: model_id.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature,
            max_tokens,
            attempt: 0,
        }
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(TransportError::InvalidInput("chat request needs a user message".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(TransportError::InvalidInput(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(TransportError::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::json!({ "kind": "chat", "request": self }))
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub request_digest: String,
    pub source: ResponseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model_id: String,
    pub input: Vec<String>,
    pub dimensions: usize,
}

impl EmbeddingRequest {
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::json!({ "kind": "embedding", "request": self }))
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    /// Position of the embedded text in the request.
    pub subject_id: usize,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Anything that can answer a chat request.
pub trait ChatClient: Sync {
    fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError>;

    /// How many requests callers may keep in flight.
    fn max_in_flight(&self) -> usize {
        1
    }
}

pub trait EmbeddingClient: Sync {
    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, TransportError>;
}

/// Failure reported by a provider backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Connection, timeout, rate limit or server error; retried.
    Transport(String),
    /// Anything else; surfaced immediately.
    Fatal(String),
}

/// A live model provider.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
    fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Serialize with lexicographically sorted object keys and no whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json's default map is ordered by key, so re-parsing through
    // `Value` normalizes any key order.
    serde_json::to_string(value).expect("JSON value serializes")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run `f` over `items` with at most `limit` concurrent workers, returning
/// results in input order.
pub fn map_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let limit = limit.max(1).min(items.len().max(1));
    if limit == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..limit {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}
