//! Rule-based rewards for a recommendation: accuracy, format and similarity,
//! combined as `λ1·accuracy + λ2·format + (1 − λ1 − λ2)·similarity`.

use crate::linalg;
use serde::{Deserialize, Serialize};

/// Phrases the explanation must contain for the format reward.
pub const DEFAULT_REQUIRED_PHRASES: [&str; 3] = ["User Preference", "Recommendation Reason", "Recommended author"];

pub fn default_required_phrases() -> Vec<String> {
    DEFAULT_REQUIRED_PHRASES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("invalid reward weights λ1={lambda1}, λ2={lambda2}: need each in [0,1] and λ1+λ2 ≤ 1")]
    Weights { lambda1: f64, lambda2: f64 },
    #[error("embedding dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct RewardWeights {
    lambda1: f64,
    lambda2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWeights {
    lambda1: f64,
    lambda2: f64,
}

impl TryFrom<RawWeights> for RewardWeights {
    type Error = RewardError;
    fn try_from(r: RawWeights) -> Result<Self, Self::Error> {
        RewardWeights::new(r.lambda1, r.lambda2)
    }
}

impl From<RewardWeights> for RawWeights {
    fn from(w: RewardWeights) -> Self {
        RawWeights { lambda1: w.lambda1, lambda2: w.lambda2 }
    }
}

impl Default for RewardWeights {
    /// λ1 = 0.5, λ2 = 0.2.
    fn default() -> Self {
        Self { lambda1: 0.5, lambda2: 0.2 }
    }
}

impl RewardWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self, RewardError> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(lambda1) || !in_unit(lambda2) || lambda1 + lambda2 > 1.0 + 1e-12 {
            return Err(RewardError::Weights { lambda1, lambda2 });
        }
        Ok(Self { lambda1, lambda2 })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn similarity_weight(&self) -> f64 {
        (1.0 - self.lambda1 - self.lambda2).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub format: f64,
    pub similarity: f64,
    pub combined: f64,
}

/// 1 iff the ids are byte-identical.
pub fn accuracy_reward(chosen: &str, truth: &str) -> f64 {
    if chosen == truth {
        1.0
    } else {
        0.0
    }
}

/// 1 iff every phrase occurs as a case-sensitive substring.
pub fn format_reward<S: AsRef<str>>(explanation: &str, required_phrases: &[S]) -> f64 {
    if required_phrases.iter().all(|p| explanation.contains(p.as_ref())) {
        1.0
    } else {
        0.0
    }
}

/// Cosine of the two author embeddings, with negative values clamped to 0.
pub fn similarity_reward(chosen_emb: &[f64], truth_emb: &[f64]) -> Result<f64, RewardError> {
    if chosen_emb.len() != truth_emb.len() {
        return Err(RewardError::Dimension(chosen_emb.len(), truth_emb.len()));
    }
    Ok(linalg::cosine(chosen_emb, truth_emb).clamp(0.0, 1.0))
}

/// Weighted combination. Evaluated as `s + λ1(a − s) + λ2(f − s)`, which is
/// algebraically the weighted sum and returns exactly 1 when all three
/// components are 1.
pub fn combine(accuracy: f64, format: f64, similarity: f64, weights: &RewardWeights) -> RewardBreakdown {
    let combined = similarity + weights.lambda1 * (accuracy - similarity) + weights.lambda2 * (format - similarity);
    RewardBreakdown { accuracy, format, similarity, combined: combined.clamp(0.0, 1.0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_is_exact_string_match() {
        assert_eq!(accuracy_reward("a1", "a1"), 1.0);
        assert_eq!(accuracy_reward("a1", "a2"), 0.0);
        assert_eq!(accuracy_reward("A1", "a1"), 0.0);
    }

    #[test]
    fn format_requires_every_phrase() {
        let phrases = default_required_phrases();
        let full = "User Preference: x. Recommendation Reason: y. Recommended author B.";
        assert_eq!(format_reward(full, &phrases), 1.0);
        assert_eq!(format_reward("User Preference: x. Recommendation Reason: y.", &phrases), 0.0);
        assert_eq!(format_reward("user preference recommendation reason recommended author", &phrases), 0.0);
        assert_eq!(format_reward::<&str>("anything", &[]), 1.0);
    }

    #[test]
    fn similarity_clamps_negatives() {
        let a = [0.6, 0.8];
        assert_eq!(similarity_reward(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity_reward(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(similarity_reward(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert!(similarity_reward(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn combine_worked_example() {
        // 0.5·1 + 0.2·1 + 0.3·0.8 = 0.94
        let w = RewardWeights::new(0.5, 0.2).unwrap();
        assert!((combine(1.0, 1.0, 0.8, &w).combined - 0.94).abs() < 1e-12);
    }

    #[test]
    fn boundary_weights_reduce_to_accuracy() {
        let w = RewardWeights::new(1.0, 0.0).unwrap();
        for (a, f, s) in [(0.0, 1.0, 0.9), (1.0, 0.0, 0.1), (0.0, 0.0, 1.0)] {
            assert_eq!(combine(a, f, s, &w).combined, a);
        }
    }

    #[test]
    fn correct_well_formed_choice_scores_one() {
        for (l1, l2) in [(0.5, 0.2), (0.1, 0.2), (0.3, 0.3), (0.0, 0.0), (0.7, 0.3), (1.0 / 3.0, 1.0 / 7.0)] {
            let w = RewardWeights::new(l1, l2).unwrap();
            assert_eq!(combine(1.0, 1.0, 1.0, &w).combined, 1.0);
        }
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(RewardWeights::new(0.7, 0.4).is_err());
        assert!(RewardWeights::new(-0.1, 0.4).is_err());
        assert!(RewardWeights::new(0.5, 1.2).is_err());
        assert!(serde_json::from_str::<RewardWeights>(r#"{"lambda1":0.9,"lambda2":0.9}"#).is_err());
        let w: RewardWeights = serde_json::from_str(r#"{"lambda1":0.5,"lambda2":0.5}"#).unwrap();
        assert_eq!(w.similarity_weight(), 0.0);
    }

    fn weights() -> impl Strategy<Value = RewardWeights> {
        (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b)| RewardWeights::new(a, b * (1.0 - a)).unwrap())
    }

    proptest! {
        #[test]
        fn combined_is_weighted_sum_in_unit_interval(w in weights(), a in 0u8..2, f in 0u8..2, s in 0.0f64..=1.0) {
            let (a, f) = (f64::from(a), f64::from(f));
            let r = combine(a, f, s, &w);
            let direct = w.lambda1() * a + w.lambda2() * f + (1.0 - w.lambda1() - w.lambda2()) * s;
            prop_assert!((r.combined - direct).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.combined));
        }

        #[test]
        fn combined_is_monotone(w in weights(), s in 0.0f64..=1.0, ds in 0.0f64..=1.0) {
            let s2 = (s + ds).min(1.0);
            prop_assert!(combine(0.0, 0.0, s2, &w).combined >= combine(0.0, 0.0, s, &w).combined - 1e-15);
            prop_assert!(combine(1.0, 0.0, s, &w).combined >= combine(0.0, 0.0, s, &w).combined - 1e-15);
            prop_assert!(combine(0.0, 1.0, s, &w).combined >= combine(0.0, 0.0, s, &w).combined - 1e-15);
        }

        #[test]
        fn no_similarity_weight_ignores_similarity(l1 in 0.0f64..=1.0, a in 0u8..2, f in 0u8..2, s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
            let w = RewardWeights::new(l1, 1.0 - l1).unwrap();
            let (a, f) = (f64::from(a), f64::from(f));
            prop_assert!((combine(a, f, s1, &w).combined - combine(a, f, s2, &w).combined).abs() <= 1e-12);
        }
    }
}
