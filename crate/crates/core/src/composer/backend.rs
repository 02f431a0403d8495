//! Completion backend interface and the chat-style wire types shared by the
//! mock and HTTP implementations.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Text,
    ImageRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentPart {
    #[serde(rename = "type")]
    pub kind: PartKind,
    pub value: String,
}

impl ContentPart {
    pub fn text(value: impl Into<String>) -> Self {
        Self { kind: PartKind::Text, value: value.into() }
    }

    pub fn image_ref(value: impl Into<String>) -> Self {
        Self { kind: PartKind::ImageRef, value: value.into() }
    }

    pub fn is_image(&self) -> bool {
        self.kind == PartKind::ImageRef
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

impl CompletionRequest {
    /// Text of the system message(s).
    pub fn instruction(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == "system")
            .flat_map(|m| m.content.iter().filter(|c| !c.is_image()).map(|c| c.value.as_str()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Text parts of the user message(s), in order.
    pub fn user_texts(&self) -> impl Iterator<Item = &str> {
        self.messages
            .iter()
            .filter(|m| m.role == "user")
            .flat_map(|m| m.content.iter().filter(|c| !c.is_image()).map(|c| c.value.as_str()))
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Timeouts and connection failures; the caller may retry.
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("missing API key: set {0}")]
    MissingApiKey(&'static str),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

pub trait CompletionBackend: Send + Sync {
    fn identifier(&self) -> String;
    fn accepts_images(&self) -> bool;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}
