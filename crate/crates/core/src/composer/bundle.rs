use crate::types::{AuthorRecord, VisualRef};
use serde::{Deserialize, Serialize};

/// Textual and visual inputs of one author, in the fixed order
/// profile, audio, comments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalBundle {
    pub text_block: String,
    pub visual_parts: Vec<VisualRef>,
}

fn labeled(label: &str, value: &str) -> String {
    if value.is_empty() {
        format!("{label}:")
    } else {
        format!("{label}: {value}")
    }
}

pub fn assemble_author_bundle(author: &AuthorRecord) -> ModalBundle {
    let text_block = [
        labeled("Profile", &author.textual_profile),
        labeled("Audio", &author.audio_text),
        labeled("Comments", &author.comments.join(" | ")),
    ]
    .join("\n");
    ModalBundle { text_block, visual_parts: author.visuals.clone() }
}
