//! Keyword vocabulary shared by the synthetic generator and the mock backend.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::OnceLock;

const ASSET: &str = include_str!("../../assets/vocabulary.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterVocab {
    pub theme: String,
    pub region: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenes {
    pub indoor: Vec<String>,
    pub outdoor: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub clusters: Vec<ClusterVocab>,
    pub scenes: Scenes,
    pub looks: Vec<String>,
    pub filler: Vec<String>,
    pub syllables: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Region,
    Theme,
    Keyword,
}

impl Vocabulary {
    /// The vocabulary shipped with the crate.
    pub fn builtin() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| serde_json::from_str(ASSET).expect("bundled vocabulary.json is valid"))
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.clusters.iter().map(|c| c.region.as_str())
    }

    /// Lowercased term -> kind, for every region, theme and content keyword.
    pub fn term_index(&self) -> HashMap<String, TermKind> {
        let mut m = HashMap::new();
        for c in &self.clusters {
            m.insert(c.region.to_lowercase(), TermKind::Region);
            m.insert(c.theme.to_lowercase(), TermKind::Theme);
            for k in &c.keywords {
                m.insert(k.to_lowercase(), TermKind::Keyword);
            }
        }
        m
    }
}
