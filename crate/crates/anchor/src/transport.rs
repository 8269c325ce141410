//! Chat-completion transports: a real HTTP client and an offline
//! fixture provider with identical behavior from the caller's side.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Generic chat-completion request body. Temperature is pinned to zero
/// by the callers so reruns against a live endpoint stay as
/// reproducible as the provider allows.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error reaching endpoint: {0}")]
    Network(String),
    #[error("response is not a chat completion: {0}")]
    Shape(String),
    #[error("auth token variable {var} is not set")]
    MissingToken { var: String },
    #[error("fixture has no canned response left")]
    FixtureExhausted,
}

/// Anything that can answer a chat request with assistant text.
pub trait ChatTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Blocking HTTP POST against a chat-completion endpoint. The auth
/// token is read from a named environment variable at send time, so
/// secrets never live in config files.
pub struct HttpTransport {
    url: String,
    token_var: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, token_var: Option<String>) -> Self {
        HttpTransport {
            url: url.into(),
            token_var,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut pending = self.client.post(&self.url).json(request);
        if let Some(var) = &self.token_var {
            let token = std::env::var(var).map_err(|_| TransportError::MissingToken {
                var: var.clone(),
            })?;
            pending = pending.bearer_auth(token);
        }
        let response = pending
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            let mut body = body;
            body.truncate(500);
            return Err(TransportError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatCompletion =
            serde_json::from_str(&body).map_err(|e| TransportError::Shape(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Shape("completion has no choices".into()))
    }
}

/// Offline stand-in: hands out canned outcomes in order, one per call.
/// No network is touched, which keeps every test runnable in a sealed
/// environment.
pub struct FixtureTransport {
    queue: Mutex<VecDeque<Result<String, TransportError>>>,
}

impl FixtureTransport {
    pub fn new(outcomes: Vec<Result<String, TransportError>>) -> Self {
        FixtureTransport {
            queue: Mutex::new(outcomes.into()),
        }
    }

    /// Fixture that always plays back one canned reply.
    pub fn single(content: impl Into<String>) -> Self {
        Self::new(vec![Ok(content.into())])
    }

    /// Load the entire file as one canned reply.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::single(std::fs::read_to_string(path)?))
    }

    /// Calls left before the fixture is exhausted.
    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("fixture lock").len()
    }
}

impl ChatTransport for FixtureTransport {
    fn complete(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        self.queue
            .lock()
            .expect("fixture lock")
            .pop_front()
            .unwrap_or(Err(TransportError::FixtureExhausted))
    }
}
