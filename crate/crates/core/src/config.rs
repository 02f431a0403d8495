//! Run configuration: defaults, a JSON file, then `section.key=value`
//! overrides, in increasing precedence.

use crate::grpo::GrpoConfig;
use crate::rewards::{self, RewardWeights};
use crate::synth::GenConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override {0:?}: expected section.key=value")]
    Override(String),
    #[error("unknown config key {0}")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposerConfig {
    pub backend: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub accepts_images: bool,
    pub encoder: EncoderKind,
    pub encoder_endpoint: String,
    pub encoder_model: String,
    pub dim: usize,
    pub max_inflight: usize,
    pub timeout_secs: f64,
    pub max_attempts: usize,
    pub retry_backoff_ms: u64,
    pub temperature: f64,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: "http://127.0.0.1:8080/v1/complete".into(),
            model: "mock-1".into(),
            accepts_images: false,
            encoder: EncoderKind::Hash,
            encoder_endpoint: "http://127.0.0.1:8080/v1/embed".into(),
            encoder_model: "text-encoder".into(),
            dim: 256,
            max_inflight: 4,
            timeout_secs: 60.0,
            max_attempts: 3,
            retry_backoff_ms: 500,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub required_phrases: Vec<String>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self { lambda1: w.lambda1(), lambda2: w.lambda2(), required_phrases: rewards::default_required_phrases() }
    }
}

impl RewardConfig {
    pub fn weights(&self) -> Result<RewardWeights, ConfigError> {
        RewardWeights::new(self.lambda1, self.lambda2).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicySource {
    /// `policy_W.json` when present, otherwise the identity.
    Auto,
    Identity,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub hit_rate_k: Vec<usize>,
    /// Split used for U2A evaluation.
    pub split: String,
    pub policy: PolicySource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1, 5, 10],
            m_values: vec![4, 10],
            hit_rate_k: vec![10, 50],
            split: "test".into(),
            policy: PolicySource::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Candidate-set size used for training.
    pub m: usize,
    pub tau: f64,
    /// Split evaluated by the training hook.
    pub eval_split: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { m: 4, tau: 0.03, eval_split: "val".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding generated data; defaults to the output directory.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; copied into every section that draws random numbers.
    pub seed: u64,
    pub out: PathBuf,
    pub paths: PathsConfig,
    pub gen: GenConfig,
    pub composer: ComposerConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            paths: PathsConfig::default(),
            gen: GenConfig::default(),
            composer: ComposerConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `section.key=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise. The key must already exist.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.into()))?;
    if path.is_empty() {
        return Err(ConfigError::Override(assignment.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
    }
    *node = value;
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text =
                std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
            let patch: Value =
                serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            merge(&mut tree, patch);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    /// Sets the top-level seed and propagates it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.gen.seed = seed;
        self.grpo.seed = seed;
        self
    }

    pub fn data_dir(&self) -> &Path {
        self.paths.data_dir.as_deref().unwrap_or(&self.out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.gen.validate().map_err(|e| invalid(e.to_string()))?;
        self.grpo.validate().map_err(|e| invalid(e.to_string()))?;
        self.reward.weights()?;
        if self.composer.dim == 0 {
            return Err(invalid("composer.dim must be positive".into()));
        }
        if self.eval.k_values.iter().chain(&self.eval.hit_rate_k).any(|&k| k == 0) {
            return Err(invalid("K values must be positive".into()));
        }
        if !(self.train.tau > 0.0 && self.train.tau <= 100.0) {
            return Err(invalid("train.tau must lie in (0, 100]".into()));
        }
        Ok(())
    }
}
