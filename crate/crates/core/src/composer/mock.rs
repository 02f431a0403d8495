//! Deterministic, content-sensitive stand-in for a multimodal chat model.
//!
//! The mock recognises the three prompt families by their instruction text:
//!
//! - preference extraction: `This user prefers {region} authors, {keyword}
//!   content, and {indoor|outdoor} scenes.` where each slot is the most
//!   frequent matching vocabulary term over the tipped authors' bundles
//!   (ties go to the lexicographically smaller term);
//! - author description: an author card echoing the author id, the image
//!   captions, the content terms and the regions found in the bundle;
//! - recommendation: a structured JSON answer picking the candidate whose
//!   feature text has the highest hashing-encoder cosine with the preference.
//!
//! Output is a pure function of the request bytes and the seed.

use super::backend::{BackendError, CompletionBackend, CompletionRequest};
use super::encoder::{tokenize, HashingEncoder, TextEncoder};
use super::prompt::{
    candidate_label, AUTHOR_ID_PREFIX, AUTHOR_INSTRUCTION, IMAGE_CAPTION_PREFIX, PREFERENCE_INSTRUCTION,
    PREFERENCE_PART_PREFIX, RECOMMENDATION_INSTRUCTION,
};
use super::vocab::{TermKind, Vocabulary};
use crate::linalg::cosine;
use std::collections::{BTreeMap, HashMap};

pub const MOCK_IDENTIFIER: &str = "mock-v1";

const REASONS: [&str; 3] = [
    "Recommended author {label} shares the most preference signals with the user; the other candidates match fewer of them.",
    "Recommended author {label} is the closest match to the stated preference, while the others diverge in content or scene.",
    "Recommended author {label} aligns best with the user's preferred content and region; the rest align less.",
];

#[derive(Debug, Clone)]
pub struct MockBackend {
    terms: HashMap<String, TermKind>,
    /// Scene word -> indoor.
    scenes: HashMap<String, bool>,
    encoder: HashingEncoder,
    seed: u64,
}

impl MockBackend {
    pub fn new(vocab: &Vocabulary, encoder_dim: usize, seed: u64) -> Self {
        let mut scenes: HashMap<String, bool> = [("indoor".to_string(), true), ("outdoor".to_string(), false)].into();
        scenes.extend(vocab.scenes.indoor.iter().map(|s| (s.to_lowercase(), true)));
        scenes.extend(vocab.scenes.outdoor.iter().map(|s| (s.to_lowercase(), false)));
        Self { terms: vocab.term_index(), scenes, encoder: HashingEncoder::new(encoder_dim), seed }
    }

    pub fn builtin(encoder_dim: usize, seed: u64) -> Self {
        Self::new(Vocabulary::builtin(), encoder_dim, seed)
    }

    fn preference(&self, req: &CompletionRequest) -> String {
        #[derive(Default)]
        struct Tally {
            count: usize,
            surface: String,
        }
        let mut regions: BTreeMap<String, Tally> = BTreeMap::new();
        let mut keywords: BTreeMap<String, Tally> = BTreeMap::new();
        let (mut indoor, mut outdoor) = (0usize, 0usize);
        for text in req.user_texts().filter(|t| !t.starts_with("Answer Format:")) {
            for raw in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
                let tok = raw.to_lowercase();
                match self.scenes.get(&tok) {
                    Some(true) => indoor += 1,
                    Some(false) => outdoor += 1,
                    None => {}
                }
                let bucket = match self.terms.get(&tok) {
                    Some(TermKind::Region) => &mut regions,
                    Some(TermKind::Keyword) => &mut keywords,
                    _ => continue,
                };
                let t = bucket.entry(tok).or_default();
                if t.count == 0 {
                    t.surface = raw.to_string();
                }
                t.count += 1;
            }
        }
        // BTreeMap iterates in lexicographic order, so max_by keeping the
        // first maximum gives the lexicographic tie-break.
        let majority = |m: &BTreeMap<String, Tally>, none: &str| {
            m.values()
                .fold(None::<&Tally>, |best, t| match best {
                    Some(b) if b.count >= t.count => Some(b),
                    _ => Some(t),
                })
                .map_or_else(|| none.to_string(), |t| t.surface.clone())
        };
        let scene = if outdoor > indoor { "outdoor" } else { "indoor" };
        format!(
            "This user prefers {} authors, {} content, and {scene} scenes.",
            majority(&regions, "various"),
            majority(&keywords, "varied")
        )
    }

    fn author_card(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let mut author_id = None;
        let mut captions = Vec::new();
        let mut content: Vec<String> = Vec::new();
        let mut regions: Vec<String> = Vec::new();
        for text in req.user_texts().filter(|t| !t.starts_with("Answer Format:")) {
            if let Some(c) = text.strip_prefix(IMAGE_CAPTION_PREFIX) {
                captions.push(c.trim().to_string());
                continue;
            }
            for line in text.lines() {
                if let Some(id) = line.strip_prefix(AUTHOR_ID_PREFIX) {
                    author_id.get_or_insert_with(|| id.trim().to_string());
                    continue;
                }
                for tok in tokenize(line) {
                    let list = match self.terms.get(&tok) {
                        Some(TermKind::Region) => &mut regions,
                        Some(TermKind::Keyword | TermKind::Theme) => &mut content,
                        None => continue,
                    };
                    if !list.contains(&tok) {
                        list.push(tok);
                    }
                }
            }
        }
        let id = author_id.ok_or_else(|| BackendError::Protocol("author prompt lacks an author id".into()))?;
        let or_none = |v: &[String], sep: &str| if v.is_empty() { "none".to_string() } else { v.join(sep) };
        Ok(format!(
            "Author {id}. Looks and scenes: {}. Content signals: {}. Region: {}.",
            or_none(&captions, "; "),
            or_none(&content, ", "),
            or_none(&regions, ", "),
        ))
    }

    fn recommendation(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let mut preference = None;
        let mut candidates = Vec::new();
        for text in req.user_texts() {
            if let Some(p) = text.strip_prefix(PREFERENCE_PART_PREFIX) {
                preference = Some(p);
            } else if let Some(label) = candidate_label(candidates.len()) {
                if let Some(rest) = text.strip_prefix(&format!("{label}: ")) {
                    candidates.push(rest);
                }
            }
        }
        let preference = preference.ok_or_else(|| BackendError::Protocol("recommendation prompt lacks a preference".into()))?;
        if candidates.is_empty() {
            return Err(BackendError::Protocol("recommendation prompt lists no candidates".into()));
        }
        let encode = |t: &str| self.encoder.encode(t).map_err(|e| BackendError::Protocol(e.to_string()));
        let u = encode(preference)?;
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, text) in candidates.iter().enumerate() {
            let s = cosine(&u, &encode(text)?);
            if s > best.1 {
                best = (j, s);
            }
        }
        let label = candidate_label(best.0).expect("at most 26 candidates are parsed").to_string();
        let reason = REASONS[(self.seed % REASONS.len() as u64) as usize].replace("{label}", &label);
        let answer = serde_json::json!({
            "User Preference": preference,
            "Recommendation Reason": reason,
            "Answer": label,
        });
        Ok(answer.to_string())
    }
}

impl CompletionBackend for MockBackend {
    fn identifier(&self) -> String {
        format!("{MOCK_IDENTIFIER}-seed{}", self.seed)
    }

    fn accepts_images(&self) -> bool {
        false
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let instruction = req.instruction();
        if instruction == PREFERENCE_INSTRUCTION {
            Ok(self.preference(req))
        } else if instruction == AUTHOR_INSTRUCTION {
            self.author_card(req)
        } else if instruction == RECOMMENDATION_INSTRUCTION {
            self.recommendation(req)
        } else {
            Err(BackendError::Protocol("mock backend does not recognise the instruction".into()))
        }
    }
}
