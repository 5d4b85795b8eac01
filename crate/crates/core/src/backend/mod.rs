//! Chat-completion backends.
//!
//! Every stage talks to the model through [`LlmBackend`]. Production use goes
//! through [`HttpBackend`] (OpenAI-compatible wire format); tests use
//! [`MockBackend`]; [`RecordingBackend`] and [`ReplayBackend`] persist and
//! serve sessions keyed by [`request_hash`].

mod http;
mod mock;
mod session;

use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{BackendConfig, HttpBackend, HttpReply, ReqwestTransport, Transport};
pub use mock::{structured_reply, MockBackend};
pub use session::{RecordingBackend, ReplayBackend, SessionEntry, SessionError};

/// Sampling temperature for step and statement informalization.
pub const INFORMALIZE_TEMPERATURE: f64 = 0.4;
/// Sampling temperature for summarization.
pub const SUMMARIZE_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MODEL: &str = "gpt-4.1-mini-2025-04-14";
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
}

/// A chat-completion request. Serializes to the OpenAI request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, temperature: f64, messages: Vec<Message>) -> Self {
        ChatRequest { model: model.into(), temperature, messages }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }

    /// Plain-text rendering used for golden files and prompt dumps.
    pub fn transcript(&self) -> String {
        let mut out = format!("model: {}\ntemperature: {}\n", self.model, self.temperature);
        for m in &self.messages {
            out.push_str(&format!("=== {} ===\n{}\n", m.role.as_str(), m.content));
        }
        out
    }
}

/// Stable identity of a request for replay: SHA-256 over the model, the
/// temperature (fixed to three decimals) and the messages with line endings
/// normalized. Any change to prompt assembly changes the hash.
pub fn request_hash(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        model: &'a str,
        temperature: String,
        messages: Vec<(&'static str, String)>,
    }
    let canonical = Canonical {
        model: &request.model,
        temperature: format!("{:.3}", request.temperature),
        messages: request
            .messages
            .iter()
            .map(|m| (m.role.as_str(), m.content.replace("\r\n", "\n")))
            .collect(),
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimit(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("replay session has no response for request {hash}")]
    ReplayMiss { hash: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Short kind tag used in diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::Transport(_) => "transport",
            BackendError::Auth(_) => "auth",
            BackendError::RateLimit(_) => "rate_limit",
            BackendError::MalformedResponse(_) => "malformed_response",
            BackendError::ReplayMiss { .. } => "replay_miss",
            BackendError::InvalidRequest(_) => "invalid_request",
        }
    }
}

/// A chat-completion service. Implementations must be safe for concurrent
/// callers.
pub trait LlmBackend: Send + Sync {
    /// Returns the content of the first completion.
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Caps the number of requests in flight against the wrapped backend.
pub struct Throttled<B> {
    inner: B,
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl<B: LlmBackend> Throttled<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Throttled { inner, limit: limit.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for Throttled<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        {
            let mut active = self.active.lock().unwrap();
            while *active >= self.limit {
                active = self.freed.wait(active).unwrap();
            }
            *active += 1;
        }
        let result = self.inner.complete(request);
        *self.active.lock().unwrap() -= 1;
        self.freed.notify_one();
        result
    }
}
