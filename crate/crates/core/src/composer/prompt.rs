//! Prompt construction for preference extraction, author description and
//! candidate recommendation.

use super::backend::{CompletionRequest, ContentPart, Message};
use super::bundle::{assemble_author_bundle, ModalBundle};
use crate::types::{AuthorRecord, Catalog, DataError, TippingSession};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PREFERENCE_INSTRUCTION: &str = include_str!("../../assets/preference_prompt.txt");
pub const RECOMMENDATION_INSTRUCTION: &str = include_str!("../../assets/recommendation_prompt.txt");
pub const AUTHOR_INSTRUCTION: &str = include_str!("../../assets/author_prompt.txt");

pub const PREFERENCE_ANSWER_FORMAT: &str =
    "A natural language description of the user's personalized behavioral preference.";
pub const AUTHOR_ANSWER_FORMAT: &str = "A concise natural language author card.";
pub const RECOMMENDATION_ANSWER_FORMAT: &str =
    r#"{"User Preference": "...", "Recommendation Reason": "...", "Answer": "A/B/C/D..."}"#;

/// Prefix of the text part carrying the preference in a recommendation prompt.
pub const PREFERENCE_PART_PREFIX: &str = "User preference: ";
/// Prefix of the text part identifying the author in a description prompt.
pub const AUTHOR_ID_PREFIX: &str = "Author ID: ";
/// Prefix used when an image is rendered for a text-only backend.
pub const IMAGE_CAPTION_PREFIX: &str = "Image: ";

pub const MAX_CANDIDATES: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptPart {
    Text { text: String },
    Image { path: String, caption: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub instruction: String,
    pub parts: Vec<PromptPart>,
    pub answer_format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self { model: "mock-1".into(), temperature: 0.0, seed: 0 }
    }
}

pub fn candidate_label(index: usize) -> Option<char> {
    (index < MAX_CANDIDATES).then(|| (b'A' + index as u8) as char)
}

fn bundle_parts(header: String, bundle: &ModalBundle, parts: &mut Vec<PromptPart>) {
    parts.push(PromptPart::Text { text: format!("{header}\n{}", bundle.text_block) });
    for v in &bundle.visual_parts {
        parts.push(PromptPart::Image { path: v.path.clone(), caption: v.caption.clone() });
    }
}

/// Instruction followed by the bundles of every tipped author, in tip order.
pub fn build_preference_prompt(session: &TippingSession, catalog: &Catalog) -> Result<Prompt, DataError> {
    let mut parts = Vec::new();
    for (i, id) in session.history.iter().enumerate() {
        let author = catalog.get(id)?;
        bundle_parts(format!("Author {}:", i + 1), &assemble_author_bundle(author), &mut parts);
    }
    Ok(Prompt {
        instruction: PREFERENCE_INSTRUCTION.to_string(),
        parts,
        answer_format: PREFERENCE_ANSWER_FORMAT.into(),
    })
}

pub fn build_author_prompt(author: &AuthorRecord) -> Prompt {
    let mut parts = Vec::new();
    bundle_parts(format!("{AUTHOR_ID_PREFIX}{}", author.author_id), &assemble_author_bundle(author), &mut parts);
    Prompt { instruction: AUTHOR_INSTRUCTION.to_string(), parts, answer_format: AUTHOR_ANSWER_FORMAT.into() }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("too many candidates: {0} (at most {MAX_CANDIDATES} can be labeled)")]
pub struct TooManyCandidates(pub usize);

/// Recommendation instruction, the preference text, then each candidate's
/// feature text labeled A, B, C, ...
pub fn build_recommendation_prompt<'a>(
    preference_text: &str,
    candidate_texts: impl ExactSizeIterator<Item = &'a str>,
) -> Result<Prompt, TooManyCandidates> {
    let m = candidate_texts.len();
    if m > MAX_CANDIDATES {
        return Err(TooManyCandidates(m));
    }
    let mut parts = vec![PromptPart::Text { text: format!("{PREFERENCE_PART_PREFIX}{preference_text}") }];
    for (j, text) in candidate_texts.enumerate() {
        let label = candidate_label(j).expect("checked above");
        parts.push(PromptPart::Text { text: format!("{label}: {text}") });
    }
    Ok(Prompt {
        instruction: RECOMMENDATION_INSTRUCTION.to_string(),
        parts,
        answer_format: RECOMMENDATION_ANSWER_FORMAT.into(),
    })
}

impl Prompt {
    /// Renders the prompt as chat messages. Images are forwarded as
    /// references only to backends that accept them; every image also
    /// contributes its caption as text.
    pub fn to_request(&self, params: &RequestParams, accepts_images: bool) -> CompletionRequest {
        let mut content = Vec::with_capacity(self.parts.len() + 1);
        for part in &self.parts {
            match part {
                PromptPart::Text { text } => content.push(ContentPart::text(text.clone())),
                PromptPart::Image { path, caption } => {
                    if accepts_images {
                        content.push(ContentPart::image_ref(path.clone()));
                    }
                    if let Some(c) = caption {
                        content.push(ContentPart::text(format!("{IMAGE_CAPTION_PREFIX}{c}")));
                    }
                }
            }
        }
        content.push(ContentPart::text(format!("Answer Format: {}", self.answer_format)));
        CompletionRequest {
            model: params.model.clone(),
            messages: vec![
                Message { role: "system".into(), content: vec![ContentPart::text(self.instruction.clone())] },
                Message { role: "user".into(), content },
            ],
            temperature: params.temperature,
            seed: params.seed,
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("prompt serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
