//! Recommendation policies over a labeled candidate set.
//!
//! [`LinearSoftmaxPolicy`] is the trainable policy: it scores candidate `j`
//! as `uᵀ W v_j` (preference embedding `u`, candidate embedding `v_j`) and
//! samples from `softmax(scores / τ)`. [`llm_policy_recommend`] asks a
//! completion backend instead; it has no usable log-probabilities and is used
//! for evaluation only.

use crate::composer::backend::{BackendError, CompletionBackend};
use crate::composer::prompt::{build_recommendation_prompt, candidate_label, RequestParams, TooManyCandidates};
use crate::linalg;
use crate::types::PreferenceProfile;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite scores")]
    NonFinite,
    #[error("temperature must be in (0, 100], got {0}")]
    Temperature(f64),
    #[error("policy matrix has non-finite entries")]
    NonFiniteWeights,
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("context has no candidates")]
    NoCandidates,
    #[error("choice index {index} out of range for {m} candidates")]
    Index { index: usize, m: usize },
    #[error(transparent)]
    TooManyCandidates(#[from] TooManyCandidates),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("could not parse a recommendation after {attempts} attempt(s) ({reason}); raw output: {raw}")]
    ParseFailed { attempts: usize, reason: ParseError, raw: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecCandidate {
    pub author_id: String,
    pub feature_text: String,
    pub embedding: Vec<f64>,
}

/// Input of one recommendation: the user's preference and the candidates in
/// presentation order. Which candidate is the ground truth is not part of the
/// context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecContext {
    pub preference: PreferenceProfile,
    pub candidates: Vec<RecCandidate>,
}

impl RecContext {
    pub fn m(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub choice_index: usize,
    pub explanation: String,
    pub log_prob: f64,
}

/// Numerically stable `softmax(scores / tau)`.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log softmax(scores / tau)` via log-sum-exp.
pub fn log_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores.iter().map(|s| ((s - max) / tau).exp()).sum::<f64>().ln();
    scores.iter().map(|s| (s - max) / tau - lse).collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxPolicy {
    w: Array2<f64>,
    tau: f64,
}

/// On-disk form: `{d, tau, W}` with `W` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub d: usize,
    pub tau: f64,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<(), PolicyError> {
    if tau > 0.0 && tau <= 100.0 {
        Ok(())
    } else {
        Err(PolicyError::Temperature(tau))
    }
}

impl LinearSoftmaxPolicy {
    /// The untrained policy: `W = I`, so scores are cosines of unit vectors.
    pub fn identity(d: usize, tau: f64) -> Result<Self, PolicyError> {
        check_tau(tau)?;
        Ok(Self { w: Array2::eye(d), tau })
    }

    pub fn new(w: Array2<f64>, tau: f64) -> Result<Self, PolicyError> {
        check_tau(tau)?;
        if !w.is_square() {
            return Err(PolicyError::Dimension { expected: w.nrows(), got: w.ncols() });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::NonFiniteWeights);
        }
        Ok(Self { w, tau })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    /// Applies `W += scale * delta`.
    pub fn apply_update(&mut self, delta: &Array2<f64>, scale: f64) {
        self.w.scaled_add(scale, delta);
    }

    pub fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint { d: self.dim(), tau: self.tau, w: self.w.iter().copied().collect() }
    }

    pub fn from_checkpoint(c: &PolicyCheckpoint) -> Result<Self, PolicyError> {
        if c.w.len() != c.d * c.d {
            return Err(PolicyError::Dimension { expected: c.d * c.d, got: c.w.len() });
        }
        let w = Array2::from_shape_vec((c.d, c.d), c.w.clone()).expect("shape checked");
        Self::new(w, c.tau)
    }

    fn check(&self, v: &[f64]) -> Result<(), PolicyError> {
        if v.len() != self.dim() {
            return Err(PolicyError::Dimension { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    /// `uᵀ W` for a query `u`.
    pub fn transform_query(&self, u: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check(u)?;
        let u = ndarray::ArrayView1::from(u);
        Ok(u.dot(&self.w).to_vec())
    }

    pub fn score_candidates(&self, ctx: &RecContext) -> Result<Vec<f64>, PolicyError> {
        if ctx.candidates.is_empty() {
            return Err(PolicyError::NoCandidates);
        }
        let wu = self.transform_query(&ctx.preference.preference_embedding)?;
        ctx.candidates
            .iter()
            .map(|c| {
                self.check(&c.embedding)?;
                Ok(linalg::dot(&wu, &c.embedding))
            })
            .collect()
    }

    fn finite_scores(&self, ctx: &RecContext) -> Result<Vec<f64>, PolicyError> {
        let s = self.score_candidates(ctx)?;
        if s.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(s)
    }

    pub fn probabilities(&self, ctx: &RecContext) -> Result<Vec<f64>, PolicyError> {
        Ok(softmax(&self.finite_scores(ctx)?, self.tau))
    }

    pub fn log_probs(&self, ctx: &RecContext) -> Result<Vec<f64>, PolicyError> {
        Ok(log_softmax(&self.finite_scores(ctx)?, self.tau))
    }

    /// Greedy choice: highest score, lowest index on ties.
    pub fn greedy(&self, ctx: &RecContext) -> Result<usize, PolicyError> {
        Ok(argmax(&self.finite_scores(ctx)?))
    }

    /// Greedy choice with its explanation and log-probability.
    pub fn recommend(&self, ctx: &RecContext) -> Result<PolicyOutput, PolicyError> {
        let logp = self.log_probs(ctx)?;
        let choice = argmax(&logp);
        Ok(PolicyOutput { choice_index: choice, explanation: explain(ctx, choice), log_prob: logp[choice] })
    }

    /// Draws `group_size` independent outputs from `softmax(scores / τ)`.
    pub fn sample_group<R: Rng + ?Sized>(
        &self,
        ctx: &RecContext,
        group_size: usize,
        rng: &mut R,
    ) -> Result<Vec<PolicyOutput>, PolicyError> {
        if group_size < 2 {
            return Err(PolicyError::GroupSize(group_size));
        }
        let scores = self.finite_scores(ctx)?;
        let probs = softmax(&scores, self.tau);
        let logp = log_softmax(&scores, self.tau);
        Ok((0..group_size)
            .map(|_| {
                let choice = sample_index(&probs, rng.random::<f64>());
                PolicyOutput { choice_index: choice, explanation: explain(ctx, choice), log_prob: logp[choice] }
            })
            .collect())
    }

    /// `∂ log π(choice) / ∂W = (1/τ) u (v_choice − Σ_j p_j v_j)ᵀ`, returned as
    /// the right factor `(v_choice − v̄) / τ`; the gradient is `u ⊗ factor`.
    pub fn log_prob_grad_factor(&self, ctx: &RecContext, choice_index: usize) -> Result<Vec<f64>, PolicyError> {
        let m = ctx.m();
        if choice_index >= m {
            return Err(PolicyError::Index { index: choice_index, m });
        }
        let probs = self.probabilities(ctx)?;
        Ok(grad_factor(ctx, &probs, choice_index, self.tau))
    }

    pub fn log_prob_grad(&self, ctx: &RecContext, choice_index: usize) -> Result<Array2<f64>, PolicyError> {
        let factor = self.log_prob_grad_factor(ctx, choice_index)?;
        Ok(outer(&ctx.preference.preference_embedding, &factor))
    }
}

pub(crate) fn grad_factor(ctx: &RecContext, probs: &[f64], choice_index: usize, tau: f64) -> Vec<f64> {
    let d = ctx.candidates[choice_index].embedding.len();
    let mut mean = vec![0.0; d];
    for (p, c) in probs.iter().zip(&ctx.candidates) {
        for (m, v) in mean.iter_mut().zip(&c.embedding) {
            *m += p * v;
        }
    }
    ctx.candidates[choice_index].embedding.iter().zip(&mean).map(|(v, m)| (v - m) / tau).collect()
}

pub fn outer(a: &[f64], b: &[f64]) -> Array2<f64> {
    let a = ndarray::ArrayView1::from(a).insert_axis(ndarray::Axis(1));
    let b = ndarray::ArrayView1::from(b).insert_axis(ndarray::Axis(0));
    a.dot(&b)
}

/// Inverse-CDF draw; `r` is uniform in [0, 1).
fn sample_index(probs: &[f64], r: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return j;
        }
    }
    // r landed in the rounding gap above the final cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Structured explanation naming the chosen candidate. Carries every key the
/// format reward and the answer parser look for.
fn explain(ctx: &RecContext, choice: usize) -> String {
    let label = candidate_label(choice).map(String::from).unwrap_or_else(|| choice.to_string());
    let author = &ctx.candidates[choice].author_id;
    serde_json::json!({
        "User Preference": ctx.preference.preference_text,
        "Recommendation Reason": format!("Recommended author {label} ({author}) has the strongest learned match with this preference."),
        "Answer": label,
    })
    .to_string()
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unparseable")]
    Unparseable,
    #[error("missing answer")]
    MissingAnswer,
    #[error("answer is not a candidate letter: {0:?}")]
    InvalidAnswer(String),
    #[error("out of range: answer {letter} with {m} candidates")]
    OutOfRange { letter: char, m: usize },
}

/// First balanced `{...}` block, honouring JSON string quoting.
fn first_json_block(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, ch) in raw[start..].char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts `(choice_index, explanation)` from a model answer of the form
/// `{"User Preference": ..., "Recommendation Reason": ..., "Answer": "B"}`,
/// possibly wrapped in prose. Keys are case-sensitive.
pub fn parse_recommendation(raw: &str, m: usize) -> Result<(usize, String), ParseError> {
    let block = first_json_block(raw).ok_or(ParseError::Unparseable)?;
    let value: serde_json::Value = serde_json::from_str(block).map_err(|_| ParseError::Unparseable)?;
    let obj = value.as_object().ok_or(ParseError::Unparseable)?;
    let answer = obj.get("Answer").ok_or(ParseError::MissingAnswer)?;
    let answer = answer.as_str().ok_or_else(|| ParseError::InvalidAnswer(answer.to_string()))?.trim();
    let mut chars = answer.chars();
    let letter = match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => c,
        _ => return Err(ParseError::InvalidAnswer(answer.to_string())),
    };
    let index = (letter as u8 - b'A') as usize;
    if index >= m {
        return Err(ParseError::OutOfRange { letter, m });
    }
    Ok((index, block.to_string()))
}

/// Asks the backend to choose among the context's candidates. The returned
/// output has `log_prob = 0`.
pub fn llm_policy_recommend(
    ctx: &RecContext,
    backend: &dyn CompletionBackend,
    params: &RequestParams,
    parse_retries: usize,
) -> Result<(PolicyOutput, String), PolicyError> {
    let prompt = build_recommendation_prompt(
        &ctx.preference.preference_text,
        ctx.candidates.iter().map(|c| c.feature_text.as_str()),
    )?;
    let request = prompt.to_request(params, backend.accepts_images());
    let attempts = parse_retries.max(1);
    let mut last = None;
    for _ in 0..attempts {
        let raw = backend.complete(&request)?;
        match parse_recommendation(&raw, ctx.m()) {
            Ok((choice_index, explanation)) => {
                return Ok((PolicyOutput { choice_index, explanation, log_prob: 0.0 }, raw));
            }
            Err(reason) => last = Some((reason, raw)),
        }
    }
    let (reason, raw) = last.expect("at least one attempt");
    Err(PolicyError::ParseFailed { attempts, reason, raw })
}
