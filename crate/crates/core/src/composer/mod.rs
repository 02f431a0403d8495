//! Preference composition: bundles and prompts go to a completion backend,
//! the returned texts are encoded into unit embeddings.

pub mod backend;
pub mod bundle;
pub mod encoder;
pub mod http;
pub mod mock;
pub mod prompt;
pub mod vocab;

pub use backend::{BackendError, CompletionBackend, CompletionRequest};
pub use bundle::{assemble_author_bundle, ModalBundle};
pub use encoder::{embed_text, EncodeError, HashingEncoder, TextEncoder};
pub use mock::MockBackend;
pub use prompt::{build_author_prompt, build_preference_prompt, build_recommendation_prompt, Prompt, RequestParams};

use crate::exec::{self, Execution};
use crate::types::{AuthorRecord, Catalog, DataError, PreferenceProfile, Provenance, TippingSession};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("backend returned an empty completion for {0}")]
    EmptyCompletion(String),
}

/// Generated description of one author plus its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorCard {
    pub author_id: String,
    pub feature_text: String,
    pub embedding: Vec<f64>,
}

pub struct Composer<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub encoder: &'a dyn TextEncoder,
    pub params: RequestParams,
    /// Upper bound on concurrent backend calls in the batch methods.
    pub max_inflight: usize,
    pub exec: Execution,
}

impl<'a> Composer<'a> {
    pub fn new(backend: &'a dyn CompletionBackend, encoder: &'a dyn TextEncoder) -> Self {
        Self { backend, encoder, params: RequestParams::default(), max_inflight: 4, exec: Execution::default() }
    }

    fn complete(&self, prompt: &Prompt, subject: &str) -> Result<String, ComposeError> {
        let request = prompt.to_request(&self.params, self.backend.accepts_images());
        let text = self.backend.complete(&request)?;
        if text.trim().is_empty() {
            return Err(ComposeError::EmptyCompletion(subject.to_string()));
        }
        Ok(text)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        embed_text(text, self.encoder)
    }

    pub fn compose_preference(&self, session: &TippingSession, catalog: &Catalog) -> Result<PreferenceProfile, ComposeError> {
        let prompt = build_preference_prompt(session, catalog)?;
        let preference_text = self.complete(&prompt, &session.user_id)?;
        let preference_embedding = self.embed(&preference_text)?;
        Ok(PreferenceProfile {
            user_id: session.user_id.clone(),
            preference_text,
            preference_embedding,
            provenance: Provenance {
                backend: self.backend.identifier(),
                encoder: self.encoder.identifier(),
                prompt_hash: prompt.hash(),
            },
        })
    }

    pub fn describe_author(&self, author: &AuthorRecord) -> Result<String, ComposeError> {
        self.complete(&build_author_prompt(author), &author.author_id)
    }

    pub fn author_card(&self, author: &AuthorRecord) -> Result<AuthorCard, ComposeError> {
        let feature_text = self.describe_author(author)?;
        let embedding = self.embed(&feature_text)?;
        Ok(AuthorCard { author_id: author.author_id.clone(), feature_text, embedding })
    }

    /// Profiles for all sessions, in input order.
    pub fn compose_all(&self, sessions: &[TippingSession], catalog: &Catalog) -> Result<Vec<PreferenceProfile>, ComposeError> {
        exec::try_map_bounded(self.exec, self.max_inflight, sessions, |_, s| self.compose_preference(s, catalog))
    }

    /// Cards for all authors, in input order.
    pub fn describe_all(&self, authors: &[AuthorRecord]) -> Result<Vec<AuthorCard>, ComposeError> {
        exec::try_map_bounded(self.exec, self.max_inflight, authors, |_, a| self.author_card(a))
    }
}
