//! Group-relative policy optimisation of [`LinearSoftmaxPolicy`].
//!
//! For every context in a minibatch a group of `G` outputs is sampled from the
//! current policy, each output is rewarded, and rewards are standardised
//! within the group into advantages. The policy then takes one gradient
//! ascent step on
//!
//! ```text
//! J(W) = mean_i [ min(ρ_i A_i, clip(ρ_i, 1−ε, 1+ε) A_i) − β·KL_i ]
//! ρ_i  = π_W(o_i) / π_old(o_i)
//! KL_i = π_ref(o_i)/π_W(o_i) − log(π_ref(o_i)/π_W(o_i)) − 1
//! ```
//!
//! with `π_ref` frozen at the initial policy. Sampling uses the current
//! policy as `π_old`, so `ρ_i = 1` on the single inner pass.

use crate::exec::{self, Execution};
use crate::policy::{grad_factor, LinearSoftmaxPolicy, PolicyError, PolicyOutput, RecContext};
use crate::rewards::{self, RewardBreakdown, RewardError, RewardWeights};
use crate::rng;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Largest |log π_ref − log π| accepted by the KL estimator.
pub const KL_LOG_RATIO_LIMIT: f64 = 50.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("non-finite reward in group")]
    NonFiniteReward,
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("non-finite log-probability")]
    NonFiniteLogProb,
    #[error("KL ratio overflow: |log ratio| = {0} exceeds {KL_LOG_RATIO_LIMIT}")]
    KlOverflow(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("truth index {index} out of range for {m} candidates")]
    TruthIndex { index: usize, m: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    /// Surrogate clipping range; `None` disables clipping.
    pub clip_eps: Option<f64>,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Contexts per step.
    pub batch_size: usize,
    pub eps_std: f64,
    pub seed: u64,
    /// Evaluation hook cadence in steps (0 = only at the start and end).
    pub eval_every: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: Some(0.2),
            kl_beta: 0.04,
            learning_rate: 0.01,
            steps: 500,
            batch_size: 32,
            eps_std: 1e-8,
            seed: 0,
            eval_every: 25,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.into()));
        if self.group_size < 2 {
            return Err(GrpoError::GroupSize(self.group_size));
        }
        if self.clip_eps.is_some_and(|e| e.is_nan() || e <= 0.0) {
            return bad("clip_eps must be positive");
        }
        if !self.kl_beta.is_finite() || self.kl_beta < 0.0 {
            return bad("kl_beta must be finite and non-negative");
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eps_std.is_nan() || self.eps_std < 0.0 {
            return bad("eps_std must be non-negative");
        }
        Ok(())
    }
}

/// A context together with the position of its ground-truth candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub context: RecContext,
    pub truth_index: usize,
}

pub trait RewardFn: Sync {
    fn reward(&self, example: &TrainExample, output: &PolicyOutput) -> Result<RewardBreakdown, GrpoError>;
}

/// Accuracy, format and similarity rewards computed from the candidates'
/// feature-text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReward {
    pub weights: RewardWeights,
    pub required_phrases: Vec<String>,
}

impl CandidateReward {
    pub fn new(weights: RewardWeights) -> Self {
        Self { weights, required_phrases: rewards::default_required_phrases() }
    }
}

impl RewardFn for CandidateReward {
    fn reward(&self, example: &TrainExample, output: &PolicyOutput) -> Result<RewardBreakdown, GrpoError> {
        let cands = &example.context.candidates;
        let truth = cands
            .get(example.truth_index)
            .ok_or(GrpoError::TruthIndex { index: example.truth_index, m: cands.len() })?;
        let chosen = cands
            .get(output.choice_index)
            .ok_or(PolicyError::Index { index: output.choice_index, m: cands.len() })?;
        let accuracy = rewards::accuracy_reward(&chosen.author_id, &truth.author_id);
        let format = rewards::format_reward(&output.explanation, &self.required_phrases);
        let similarity = rewards::similarity_reward(&chosen.embedding, &truth.embedding)?;
        Ok(rewards::combine(accuracy, format, similarity, &self.weights))
    }
}

/// `A_i = (r_i − mean) / std` with the population std; all zeros when
/// `std < eps_std`.
pub fn compute_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupSize(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward);
    }
    let n = rewards.len() as f64;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    // Two-pass centring removes the rounding error of the first mean.
    let mut centred: Vec<f64> = rewards.iter().map(|r| r - mean(rewards)).collect();
    let residual = mean(&centred);
    centred.iter_mut().for_each(|c| *c -= residual);
    let std = (centred.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    if std < eps_std {
        return Ok(vec![0.0; rewards.len()]);
    }
    let mut adv: Vec<f64> = centred.iter().map(|c| c / std).collect();
    let residual = mean(&adv);
    adv.iter_mut().for_each(|a| *a -= residual);
    Ok(adv)
}

/// `ρ − log ρ − 1` with `ρ = π_ref / π_current`, evaluated as
/// `expm1(x) − x` for `x = log π_ref − log π_current`.
pub fn kl_penalty(logp_current: f64, logp_ref: f64) -> Result<f64, GrpoError> {
    if !logp_current.is_finite() || !logp_ref.is_finite() {
        return Err(GrpoError::NonFiniteLogProb);
    }
    let x = logp_ref - logp_current;
    if x.abs() > KL_LOG_RATIO_LIMIT {
        return Err(GrpoError::KlOverflow(x.abs()));
    }
    Ok((x.exp_m1() - x).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    /// Position of the context in the step's batch.
    pub context_ref: usize,
    pub outputs: Vec<PolicyOutput>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
}

impl GroupSample {
    pub fn combined_rewards(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.combined).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub mean_kl: f64,
    /// Fraction of this step's sampled outputs that chose the ground truth.
    pub accuracy: f64,
    /// Same fraction accumulated over all steps so far.
    pub accuracy_so_far: f64,
    pub update_norm: f64,
}

fn clip(rho: f64, eps: Option<f64>) -> f64 {
    match eps {
        Some(e) => rho.clamp(1.0 - e, 1.0 + e),
        None => rho,
    }
}

/// Samples one group per context from `policy` and scores it. Context `k` of
/// step `step` draws from its own substream, so results do not depend on
/// scheduling.
pub fn sample_groups(
    policy: &LinearSoftmaxPolicy,
    reference: &LinearSoftmaxPolicy,
    batch: &[&TrainExample],
    reward_fn: &dyn RewardFn,
    cfg: &GrpoConfig,
    step: usize,
    exec: Execution,
) -> Result<Vec<GroupSample>, GrpoError> {
    if batch.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    exec::try_map(exec, batch, |k, ex| {
        let mut r = rng::stream(cfg.seed, "sample", &[step as u64, k as u64]);
        let outputs = policy.sample_group(&ex.context, cfg.group_size, &mut r)?;
        let ref_logp = reference.log_probs(&ex.context)?;
        let rewards = outputs.iter().map(|o| reward_fn.reward(ex, o)).collect::<Result<Vec<_>, _>>()?;
        let combined: Vec<f64> = rewards.iter().map(|r| r.combined).collect();
        let advantages = compute_advantages(&combined, cfg.eps_std)?;
        Ok(GroupSample {
            context_ref: k,
            old_log_probs: outputs.iter().map(|o| o.log_prob).collect(),
            ref_log_probs: outputs.iter().map(|o| ref_logp[o.choice_index]).collect(),
            outputs,
            rewards,
            advantages,
        })
    })
}

struct ContextTerms {
    objective: f64,
    /// Σ_i c_i (v_{o_i} − v̄)/τ; the context's gradient is `u ⊗ right`.
    right: Vec<f64>,
}

fn context_terms(
    policy: &LinearSoftmaxPolicy,
    ex: &TrainExample,
    g: &GroupSample,
    cfg: &GrpoConfig,
) -> Result<ContextTerms, GrpoError> {
    let logp = policy.log_probs(&ex.context)?;
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let mut objective = 0.0;
    let mut right = vec![0.0; policy.dim()];
    for (i, o) in g.outputs.iter().enumerate() {
        let lp = logp[o.choice_index];
        let a = g.advantages[i];
        let rho = (lp - g.old_log_probs[i]).exp();
        let unclipped = rho * a;
        let clipped = clip(rho, cfg.clip_eps) * a;
        let kl = kl_penalty(lp, g.ref_log_probs[i])?;
        objective += unclipped.min(clipped) - cfg.kl_beta * kl;
        // d/dlogπ of the surrogate: ρA while the unclipped branch is active.
        let surrogate = if unclipped <= clipped { unclipped } else { 0.0 };
        // d/dlogπ of KL: 1 − π_ref/π.
        let kl_grad = -(g.ref_log_probs[i] - lp).exp_m1();
        let coef = surrogate - cfg.kl_beta * kl_grad;
        if coef != 0.0 {
            let f = grad_factor(&ex.context, &probs, o.choice_index, policy.tau());
            right.iter_mut().zip(&f).for_each(|(r, x)| *r += coef * x);
        }
    }
    Ok(ContextTerms { objective, right })
}

fn total_outputs(groups: &[GroupSample]) -> usize {
    groups.iter().map(|g| g.outputs.len()).sum()
}

/// Per-step objective `J(W)` for fixed samples, averaged over all outputs.
pub fn surrogate_objective(
    policy: &LinearSoftmaxPolicy,
    batch: &[&TrainExample],
    groups: &[GroupSample],
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    let mut total = 0.0;
    for g in groups {
        total += context_terms(policy, batch[g.context_ref], g, cfg)?.objective;
    }
    Ok(total / total_outputs(groups) as f64)
}

/// Analytic `∂J/∂W`. Per-context terms may be computed in parallel; they are
/// summed in context order.
pub fn objective_gradient(
    policy: &LinearSoftmaxPolicy,
    batch: &[&TrainExample],
    groups: &[GroupSample],
    cfg: &GrpoConfig,
    exec: Execution,
) -> Result<Array2<f64>, GrpoError> {
    let terms = exec::try_map(exec, groups, |_, g| context_terms(policy, batch[g.context_ref], g, cfg))?;
    let d = policy.dim();
    let mut grad = Array2::<f64>::zeros((d, d));
    let n = total_outputs(groups) as f64;
    for (g, t) in groups.iter().zip(&terms) {
        let u = &batch[g.context_ref].context.preference.preference_embedding;
        for (a, &ua) in u.iter().enumerate() {
            if ua == 0.0 {
                continue;
            }
            let mut row = grad.row_mut(a);
            row.iter_mut().zip(&t.right).for_each(|(x, r)| *x += ua * r / n);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub policy: LinearSoftmaxPolicy,
    pub stats: TrainStats,
    pub groups: Vec<GroupSample>,
}

/// One sampling pass plus one gradient ascent step.
pub fn grpo_step(
    policy: &LinearSoftmaxPolicy,
    reference: &LinearSoftmaxPolicy,
    batch: &[&TrainExample],
    reward_fn: &dyn RewardFn,
    cfg: &GrpoConfig,
    step: usize,
    exec: Execution,
) -> Result<StepOutcome, GrpoError> {
    cfg.validate()?;
    let groups = sample_groups(policy, reference, batch, reward_fn, cfg, step, exec)?;
    let grad = objective_gradient(policy, batch, &groups, cfg, exec)?;
    let mut updated = policy.clone();
    updated.apply_update(&grad, cfg.learning_rate);

    let n = total_outputs(&groups) as f64;
    let (mut reward, mut abs_adv, mut kl, mut correct) = (0.0, 0.0, 0.0, 0usize);
    for g in &groups {
        let truth = batch[g.context_ref].truth_index;
        for (i, o) in g.outputs.iter().enumerate() {
            reward += g.rewards[i].combined;
            abs_adv += g.advantages[i].abs();
            kl += kl_penalty(g.old_log_probs[i], g.ref_log_probs[i])?;
            correct += usize::from(o.choice_index == truth);
        }
    }
    let stats = TrainStats {
        step,
        mean_reward: reward / n,
        mean_abs_advantage: abs_adv / n,
        mean_kl: kl / n,
        accuracy: correct as f64 / n,
        accuracy_so_far: correct as f64 / n,
        update_norm: cfg.learning_rate * grad.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    Ok(StepOutcome { policy: updated, stats, groups })
}

/// Callback receiving a step number and the policy at that step.
pub type EvalHook<'a> = &'a mut dyn FnMut(usize, &LinearSoftmaxPolicy);

/// Runs `cfg.steps` GRPO steps over shuffled minibatches of `dataset`.
/// `eval_hook` is called with the step number and current policy at step 0,
/// every `cfg.eval_every` steps, and after the last step.
pub fn train(
    policy: &LinearSoftmaxPolicy,
    dataset: &[TrainExample],
    reward_fn: &dyn RewardFn,
    cfg: &GrpoConfig,
    exec: Execution,
    mut eval_hook: Option<EvalHook<'_>>,
) -> Result<(LinearSoftmaxPolicy, Vec<TrainStats>), GrpoError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(GrpoError::EmptyDataset);
    }
    let reference = policy.clone();
    let mut current = policy.clone();
    let mut history = Vec::with_capacity(cfg.steps);
    if let Some(h) = eval_hook.as_mut() {
        h(0, &current);
    }
    let batch_size = cfg.batch_size.min(dataset.len());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let (mut correct, mut seen) = (0.0, 0.0);
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng::stream(cfg.seed, "train", &[epoch]));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&dataset[order[cursor]]);
            cursor += 1;
        }
        let outcome = grpo_step(&current, &reference, &batch, reward_fn, cfg, step, exec)?;
        current = outcome.policy;
        let n = total_outputs(&outcome.groups) as f64;
        correct += outcome.stats.accuracy * n;
        seen += n;
        let mut stats = outcome.stats;
        stats.accuracy_so_far = correct / seen;
        log::debug!(
            "event=grpo_step step={step} mean_reward={:.4} mean_kl={:.6} accuracy={:.4}",
            stats.mean_reward,
            stats.mean_kl,
            stats.accuracy
        );
        history.push(stats);
        let due = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if due || step == cfg.steps {
            if let Some(h) = eval_hook.as_mut() {
                h(step, &current);
            }
        }
    }
    Ok((current, history))
}
