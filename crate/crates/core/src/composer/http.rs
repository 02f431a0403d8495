//! HTTP completion backend and text encoder.
//!
//! Completion wire format: `POST {endpoint}` with a [`CompletionRequest`]
//! body, answered by `{"text": "..."}`. Encoder wire format: `POST
//! {endpoint}` with `{"model", "input"}`, answered by `{"vector": [...]}`.
//! The API key, when present, is sent as a bearer token.

use super::backend::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse};
use super::encoder::{EncodeError, TextEncoder};
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub const API_KEY_ENV: &str = "MSPA_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: usize,
    pub retry_backoff: Duration,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

struct Client {
    agent: ureq::Agent,
    settings: HttpSettings,
}

impl Client {
    fn new(settings: HttpSettings) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build();
        Self { agent: ureq::Agent::new_with_config(config), settings }
    }

    fn post_once(&self, body: &str) -> Result<String, Failure> {
        let mut req = self.agent.post(&self.settings.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Failure::Retryable(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(Failure::Retryable(format!("http status {status}"))),
            _ => Err(Failure::Fatal(format!("http status {status}: {text}"))),
        }
    }

    /// Posts `body`, retrying transport failures, 429 and 5xx responses.
    fn post(&self, body: &str) -> Result<String, BackendError> {
        let attempts = self.settings.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(msg)) => return Err(BackendError::Protocol(msg)),
                Err(Failure::Retryable(msg)) => {
                    log::warn!("event=http_retry attempt={attempt} error={msg:?}");
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep(self.settings.retry_backoff * attempt as u32);
                    }
                }
            }
        }
        Err(BackendError::Transport { attempts, message: last })
    }
}

pub struct HttpBackend {
    client: Client,
    accepts_images: bool,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings, accepts_images: bool) -> Self {
        Self { client: Client::new(settings), accepts_images }
    }
}

impl CompletionBackend for HttpBackend {
    fn identifier(&self) -> String {
        format!("http:{}", self.client.settings.model)
    }

    fn accepts_images(&self) -> bool {
        self.accepts_images
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut request = request.clone();
        request.model = self.client.settings.model.clone();
        let body = serde_json::to_string(&request).expect("request serializes");
        let raw = self.client.post(&body)?;
        let resp: CompletionResponse =
            serde_json::from_str(&raw).map_err(|e| BackendError::Protocol(format!("bad completion response: {e}")))?;
        Ok(resp.text)
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EncodeResponse {
    vector: Vec<f64>,
}

pub struct HttpEncoder {
    client: Client,
    dim: usize,
}

impl HttpEncoder {
    pub fn new(settings: HttpSettings, dim: usize) -> Self {
        Self { client: Client::new(settings), dim }
    }
}

impl TextEncoder for HttpEncoder {
    fn identifier(&self) -> String {
        format!("http:{}-d{}", self.client.settings.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        if text.trim().is_empty() {
            return Err(EncodeError::EmptyText);
        }
        let body = serde_json::to_string(&EncodeRequest { model: &self.client.settings.model, input: text })
            .expect("request serializes");
        let raw = self.client.post(&body).map_err(|e| match e {
            BackendError::Transport { attempts, message } => EncodeError::Transport { attempts, message },
            other => EncodeError::Transport { attempts: 1, message: other.to_string() },
        })?;
        let resp: EncodeResponse = serde_json::from_str(&raw)
            .map_err(|e| EncodeError::Transport { attempts: 1, message: format!("bad encoder response: {e}") })?;
        if resp.vector.len() != self.dim {
            return Err(EncodeError::Dimension { expected: self.dim, got: resp.vector.len() });
        }
        crate::linalg::normalized(resp.vector).ok_or(EncodeError::Degenerate)
    }
}
