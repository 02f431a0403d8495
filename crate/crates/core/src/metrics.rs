//! Exact cosine retrieval and evaluation metrics.

use crate::exec::{self, Execution};
use crate::linalg;
use crate::types::SimilarityTriple;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("K must be at least 1")]
    ZeroK,
    #[error("duplicate id {0} in index")]
    DuplicateId(String),
    #[error("vector for {id} has dimension {got}, expected {expected}")]
    Dimension { id: String, expected: usize, got: usize },
    #[error("vector for {0} is not unit-norm")]
    NotUnit(String),
    #[error("length mismatch: {0} rankings vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("no embedding for author {0}")]
    MissingEmbedding(String),
    #[error("AUC needs at least one positive and one negative")]
    SingleClass,
    #[error("empty evaluation set")]
    Empty,
}

/// Brute-force cosine index over unit vectors.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl VectorIndex {
    pub fn build(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self, MetricError> {
        let mut index = VectorIndex::default();
        let mut seen = HashSet::new();
        for (id, v) in entries {
            if index.ids.is_empty() {
                index.dim = v.len();
            }
            if v.len() != index.dim {
                return Err(MetricError::Dimension { id, expected: index.dim, got: v.len() });
            }
            if !linalg::is_unit(&v, 1e-6) {
                return Err(MetricError::NotUnit(id));
            }
            if !seen.insert(id.clone()) {
                return Err(MetricError::DuplicateId(id));
            }
            index.ids.push(id);
            index.vectors.push(v);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|i| self.vectors[i].as_slice())
    }

    /// The `min(k, len)` nearest entries by cosine, descending, ties by
    /// ascending id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>, MetricError> {
        if self.is_empty() {
            return Err(MetricError::EmptyIndex);
        }
        if k == 0 {
            return Err(MetricError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(MetricError::Dimension { id: "<query>".into(), expected: self.dim, got: query.len() });
        }
        let mut scored: Vec<(usize, f64)> =
            self.vectors.iter().enumerate().map(|(i, v)| (i, linalg::cosine(query, v))).collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored.into_iter().map(|(i, s)| (self.ids[i].clone(), s)).collect())
    }

    /// `top_k` for many queries.
    pub fn top_k_batch(&self, queries: &[Vec<f64>], k: usize, exec: Execution) -> Result<Vec<Vec<String>>, MetricError> {
        exec::try_map(exec, queries, |_, q| Ok(self.top_k(q, k)?.into_iter().map(|(id, _)| id).collect()))
    }
}

fn check_lengths<A, B>(a: &[A], b: &[B]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// 1-based rank of `truth` within the first `k` entries.
fn rank_within<S: AsRef<str>>(ranked: &[S], truth: &str, k: usize) -> Option<usize> {
    ranked.iter().take(k).position(|id| id.as_ref() == truth).map(|p| p + 1)
}

pub fn recall_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[Vec<S>], truths: &[T], k: usize) -> Result<f64, MetricError> {
    check_lengths(ranked, truths)?;
    let hits = ranked.iter().zip(truths).filter(|(r, t)| rank_within(r, t.as_ref(), k).is_some()).count();
    Ok(hits as f64 / ranked.len() as f64)
}

pub fn ndcg_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[Vec<S>], truths: &[T], k: usize) -> Result<f64, MetricError> {
    check_lengths(ranked, truths)?;
    let total: f64 = ranked
        .iter()
        .zip(truths)
        .filter_map(|(r, t)| rank_within(r, t.as_ref(), k))
        .map(|rank| 1.0 / ((rank + 1) as f64).log2())
        .sum();
    Ok(total / ranked.len() as f64)
}

pub fn acc_at_m<S: PartialEq>(predictions: &[S], truths: &[S]) -> Result<f64, MetricError> {
    check_lengths(predictions, truths)?;
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Fraction of triples with `cos(anchor, closer) > cos(anchor, farther)`;
/// exact ties count as failures.
pub fn alignment_rate(triples: &[SimilarityTriple], embeddings: &HashMap<String, Vec<f64>>) -> Result<f64, MetricError> {
    if triples.is_empty() {
        return Err(MetricError::Empty);
    }
    let get = |id: &str| embeddings.get(id).ok_or_else(|| MetricError::MissingEmbedding(id.to_string()));
    let mut aligned = 0usize;
    for t in triples {
        let a = get(&t.anchor)?;
        let near = linalg::cosine(a, get(&t.closer)?);
        let far = linalg::cosine(a, get(&t.farther)?);
        aligned += usize::from(near > far);
    }
    Ok(aligned as f64 / triples.len() as f64)
}

/// Full-catalog top-`k` retrieval per user, scored as recall.
pub fn hit_rate_at_k<T: AsRef<str> + Sync>(
    index: &VectorIndex,
    user_embeddings: &[Vec<f64>],
    truths: &[T],
    k: usize,
    exec: Execution,
) -> Result<f64, MetricError> {
    check_lengths(user_embeddings, truths)?;
    let ranked = index.top_k_batch(user_embeddings, k, exec)?;
    recall_at_k(&ranked, truths, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub user: String,
    pub item: String,
    pub score: f64,
    pub label: u8,
}

/// Rank-based AUC with half credit for ties. `None` when a class is absent.
fn auc_of(pairs: &[&ScoredPair]) -> Option<f64> {
    let mut sorted: Vec<&ScoredPair> = pairs.to_vec();
    sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(Ordering::Equal));
    let (mut credit, mut pos, mut neg) = (0.0, 0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        let p = sorted[i..j].iter().filter(|s| s.label == 1).count();
        let n = (j - i) - p;
        // Positives here beat every earlier negative and tie with these.
        credit += p as f64 * neg as f64 + 0.5 * p as f64 * n as f64;
        pos += p;
        neg += n;
        i = j;
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    Some(credit / (pos as f64 * neg as f64))
}

/// Pooled AUC and mean per-user AUC over users having both classes.
pub fn auc_uauc(pairs: &[ScoredPair]) -> Result<(f64, f64), MetricError> {
    let all: Vec<&ScoredPair> = pairs.iter().collect();
    let auc = auc_of(&all).ok_or(MetricError::SingleClass)?;
    let mut by_user: BTreeMap<&str, Vec<&ScoredPair>> = BTreeMap::new();
    for p in pairs {
        by_user.entry(&p.user).or_default().push(p);
    }
    let per_user: Vec<f64> = by_user.values().filter_map(|ps| auc_of(ps)).collect();
    let uauc = if per_user.is_empty() { f64::NAN } else { per_user.iter().sum::<f64>() / per_user.len() as f64 };
    Ok((auc, uauc))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub catalog: usize,
    pub retrieval_pool: usize,
    pub u2a_sessions: usize,
    pub candidate_sets: BTreeMap<String, usize>,
    pub triples: usize,
    pub auc_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_m: BTreeMap<String, f64>,
    pub recall_at_k: BTreeMap<String, f64>,
    pub ndcg_at_k: BTreeMap<String, f64>,
    pub hit_rate_at_k: BTreeMap<String, f64>,
    pub alignment_rate: Option<f64>,
    pub auc: Option<f64>,
    pub uauc: Option<f64>,
    pub counts: Counts,
}

impl EvalReport {
    /// Combines two partial reports; fields set in `other` win.
    pub fn merge(mut self, other: EvalReport) -> EvalReport {
        self.acc_m.extend(other.acc_m);
        self.recall_at_k.extend(other.recall_at_k);
        self.ndcg_at_k.extend(other.ndcg_at_k);
        self.hit_rate_at_k.extend(other.hit_rate_at_k);
        self.alignment_rate = other.alignment_rate.or(self.alignment_rate);
        self.auc = other.auc.or(self.auc);
        self.uauc = other.uauc.or(self.uauc);
        let (mut c, o) = (self.counts, other.counts);
        c.catalog = c.catalog.max(o.catalog);
        c.retrieval_pool = c.retrieval_pool.max(o.retrieval_pool);
        c.u2a_sessions = c.u2a_sessions.max(o.u2a_sessions);
        c.candidate_sets.extend(o.candidate_sets);
        c.triples = c.triples.max(o.triples);
        c.auc_pairs = c.auc_pairs.max(o.auc_pairs);
        self.counts = c;
        self
    }

    pub fn to_markdown(&self) -> String {
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        let num = |x: f64| format!("{x:.3}");
        let mut cols: Vec<(String, String)> = Vec::new();
        for (m, v) in &self.acc_m {
            cols.push((format!("Acc (m={m})"), pct(*v)));
        }
        for (k, v) in &self.recall_at_k {
            cols.push((format!("Recall@{k}"), num(*v)));
        }
        for (k, v) in &self.ndcg_at_k {
            cols.push((format!("NDCG@{k}"), num(*v)));
        }
        for (k, v) in &self.hit_rate_at_k {
            cols.push((format!("HitRate@{k}"), num(*v)));
        }
        if let Some(v) = self.alignment_rate {
            cols.push(("A.R.".into(), num(v)));
        }
        if let Some(v) = self.auc {
            cols.push(("AUC".into(), num(v)));
        }
        if let Some(v) = self.uauc {
            cols.push(("UAUC".into(), num(v)));
        }
        let header: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        let values: Vec<&str> = cols.iter().map(|c| c.1.as_str()).collect();
        format!(
            "| Method | {} |\n|---|{}\n| policy | {} |\n\nRetrieval pool: {} authors. U2A sessions: {}. Triples: {}.\n",
            header.join(" | "),
            "---|".repeat(cols.len()),
            values.join(" | "),
            self.counts.retrieval_pool,
            self.counts.u2a_sessions,
            self.counts.triples
        )
    }
}
