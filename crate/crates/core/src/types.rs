//! Shared data model: authors, tipping sessions, candidate sets, generated
//! preferences, recommendations and similarity triples.
//!
//! All ids are opaque strings compared byte-for-byte. Wherever an ordering
//! needs a tie-break, the lexicographically smaller id wins.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// An image reference. Bytes are never embedded, only the path and an
/// optional caption that text-only backends can read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualRef {
    pub path: String,
    #[serde(default)]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorRecord {
    pub author_id: String,
    /// Nickname, location and self-description.
    pub textual_profile: String,
    pub visuals: Vec<VisualRef>,
    /// Transcript of the stream's audio.
    pub audio_text: String,
    pub comments: Vec<String>,
    #[serde(default)]
    pub region: Option<String>,
}

impl AuthorRecord {
    /// True when at least one textual field or caption carries content.
    pub fn has_textual_signal(&self) -> bool {
        let nonblank = |s: &str| !s.trim().is_empty();
        nonblank(&self.textual_profile)
            || nonblank(&self.audio_text)
            || self.comments.iter().any(|c| nonblank(c))
            || self.visuals.iter().any(|v| v.caption.as_deref().is_some_and(nonblank))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TippingSession {
    pub user_id: String,
    /// Tipped authors in tipping order.
    pub history: Vec<String>,
    /// The held-out last tipped author.
    pub ground_truth: String,
}

pub const MIN_HISTORY: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub session_ref: String,
    pub candidates: Vec<String>,
    pub truth_index: usize,
}

impl CandidateSet {
    pub fn m(&self) -> usize {
        self.candidates.len()
    }

    pub fn truth(&self) -> &str {
        &self.candidates[self.truth_index]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub encoder: String,
    /// SHA-256 (hex) of the rendered prompt.
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    pub user_id: String,
    pub preference_text: String,
    pub preference_embedding: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub chosen: String,
    pub explanation: String,
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityTriple {
    pub anchor: String,
    pub closer: String,
    pub farther: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DataError {
    #[error("duplicate author id {0}")]
    DuplicateAuthor(String),
    #[error("unknown author {0}")]
    UnknownAuthor(String),
    #[error("session {user_id}: {reason}")]
    InvalidSession { user_id: String, reason: String },
    #[error("candidate set for {session}: {reason}")]
    InvalidCandidates { session: String, reason: String },
    #[error("invalid triple ({anchor}, {closer}, {farther})")]
    InvalidTriple { anchor: String, closer: String, farther: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub author_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub accepted: Vec<String>,
    pub rejected: Vec<Rejection>,
}

/// Checks the author invariants. Duplicate ids are a hard error; authors
/// without any textual signal (or with an empty id) are rejected with a reason.
pub fn validate_catalog(catalog: &[AuthorRecord]) -> Result<ValidationReport, DataError> {
    let mut seen = std::collections::HashSet::new();
    for a in catalog {
        if !seen.insert(a.author_id.as_str()) {
            return Err(DataError::DuplicateAuthor(a.author_id.clone()));
        }
    }
    let mut report = ValidationReport::default();
    for a in catalog {
        let reason = if a.author_id.is_empty() {
            Some("empty author id")
        } else if !a.has_textual_signal() {
            Some("no textual signal")
        } else {
            None
        };
        match reason {
            Some(r) => report.rejected.push(Rejection { author_id: a.author_id.clone(), reason: r.into() }),
            None => report.accepted.push(a.author_id.clone()),
        }
    }
    Ok(report)
}

/// Authors indexed by id, preserving the original order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    authors: Vec<AuthorRecord>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(authors: Vec<AuthorRecord>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(authors.len());
        for (i, a) in authors.iter().enumerate() {
            if index.insert(a.author_id.clone(), i).is_some() {
                return Err(DataError::DuplicateAuthor(a.author_id.clone()));
            }
        }
        Ok(Self { authors, index })
    }

    pub fn get(&self, id: &str) -> Result<&AuthorRecord, DataError> {
        self.index
            .get(id)
            .map(|&i| &self.authors[i])
            .ok_or_else(|| DataError::UnknownAuthor(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn authors(&self) -> &[AuthorRecord] {
        &self.authors
    }

    pub fn len(&self) -> usize {
        self.authors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.authors.is_empty()
    }
}

impl TippingSession {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), DataError> {
        let bad = |reason: String| DataError::InvalidSession { user_id: self.user_id.clone(), reason };
        if self.history.len() < MIN_HISTORY {
            return Err(bad(format!("history has {} authors, need at least {MIN_HISTORY}", self.history.len())));
        }
        if self.history.contains(&self.ground_truth) {
            return Err(bad("ground truth appears in history".into()));
        }
        for id in self.history.iter().chain(std::iter::once(&self.ground_truth)) {
            catalog.get(id)?;
        }
        Ok(())
    }
}

impl CandidateSet {
    pub fn validate(&self, truth: &str) -> Result<(), DataError> {
        let bad = |reason: &str| DataError::InvalidCandidates { session: self.session_ref.clone(), reason: reason.into() };
        if self.truth_index >= self.candidates.len() || self.candidates[self.truth_index] != truth {
            return Err(bad("truth_index does not point at the ground truth"));
        }
        if self.candidates.iter().filter(|c| *c == truth).count() != 1 {
            return Err(bad("ground truth must appear exactly once"));
        }
        let distinct: std::collections::BTreeSet<_> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            return Err(bad("candidates are not distinct"));
        }
        Ok(())
    }
}

impl SimilarityTriple {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.anchor == self.closer || self.anchor == self.farther || self.closer == self.farther {
            return Err(DataError::InvalidTriple {
                anchor: self.anchor.clone(),
                closer: self.closer.clone(),
                farther: self.farther.clone(),
            });
        }
        Ok(())
    }
}

/// Candidate sets grouped by session and size.
pub fn index_candidate_sets(sets: &[CandidateSet]) -> BTreeMap<(String, usize), &CandidateSet> {
    sets.iter().map(|s| ((s.session_ref.clone(), s.m()), s)).collect()
}
