//! File-level pipeline steps behind the `mspa` subcommands.
//!
//! Generated data lives in [`RunConfig::data_dir`]; every step writes its
//! outputs to [`RunConfig::out`].

use crate::composer::http::{HttpBackend, HttpEncoder, HttpSettings, API_KEY_ENV};
use crate::composer::{AuthorCard, CompletionBackend, ComposeError, Composer, HashingEncoder, MockBackend, TextEncoder};
use crate::config::{BackendKind, ConfigError, EncoderKind, PolicySource, RunConfig};
use crate::exec::{self, Execution};
use crate::grpo::{self, CandidateReward, GrpoError, TrainExample, TrainStats};
use crate::jsonl::{self, JsonlError};
use crate::metrics::{self, EvalReport, MetricError, ScoredPair, VectorIndex};
use crate::policy::{llm_policy_recommend, LinearSoftmaxPolicy, PolicyCheckpoint, PolicyError, RecCandidate, RecContext};
use crate::composer::prompt::RequestParams;
use crate::rng;
use crate::synth::{self, GenConfig, GenError, Splits};
use crate::types::{
    validate_catalog, AuthorRecord, CandidateSet, Catalog, DataError, PreferenceProfile, Recommendation, SimilarityTriple,
    TippingSession,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const TRIPLES_FILE: &str = "triples.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const MANIFEST_FILE: &str = "gen_manifest.json";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const AUTHOR_CARDS_FILE: &str = "author_cards.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const POLICY_FILE: &str = "policy_W.json";
pub const TRAIN_STATS_FILE: &str = "train_stats.jsonl";
pub const EVAL_CURVE_FILE: &str = "eval_curve.jsonl";
pub const EVAL_U2A_FILE: &str = "eval_u2a.json";
pub const EVAL_A2A_FILE: &str = "eval_a2a.json";
pub const REPORT_FILE: &str = "eval_report.json";
pub const REPORT_MD_FILE: &str = "eval_report.md";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("no candidate set of size {m} for session {session}")]
    NoCandidates { session: String, m: usize },
    #[error("unknown split {0:?}; expected train, val or test")]
    UnknownSplit(String),
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("nothing to report: no evaluation outputs in {0}")]
    NothingToReport(PathBuf),
}

impl PipelineError {
    /// True for errors caused by the invocation rather than the data.
    pub fn is_usage(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::UnknownSplit(_))
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json { path: path.to_path_buf(), message: e.to_string() })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub config: GenConfig,
    pub rng: String,
    pub vocabulary_version: u32,
    pub files: BTreeMap<String, String>,
    pub sessions: usize,
    pub discarded_users: usize,
    pub candidate_fallbacks: BTreeMap<String, usize>,
}

pub fn gen_data(cfg: &RunConfig) -> Result<GenManifest> {
    cfg.gen.validate()?;
    let dir = cfg.out.as_path();
    ensure_dir(dir)?;
    let latent = synth::gen_catalog(&cfg.gen)?;
    let generated = synth::gen_sessions(&latent, &cfg.gen)?;
    let mut sets: Vec<CandidateSet> = Vec::new();
    let mut fallbacks = BTreeMap::new();
    for &m in &cfg.gen.m_values {
        let out = synth::gen_candidate_sets(&generated.sessions, &latent, m, &cfg.gen)?;
        fallbacks.insert(m.to_string(), out.fallback_warnings);
        sets.extend(out.sets);
    }
    let triples = synth::gen_triples(&latent, cfg.gen.num_triples, &cfg.gen)?;

    jsonl::write(dir.join(CATALOG_FILE), &latent.records())?;
    jsonl::write(dir.join(SESSIONS_FILE), &generated.sessions)?;
    jsonl::write(dir.join(CANDIDATES_FILE), &sets)?;
    jsonl::write(dir.join(TRIPLES_FILE), &triples)?;
    write_json(&dir.join(SPLITS_FILE), &generated.splits)?;

    let mut files = BTreeMap::new();
    for name in [CATALOG_FILE, SESSIONS_FILE, CANDIDATES_FILE, TRIPLES_FILE, SPLITS_FILE] {
        files.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let manifest = GenManifest {
        config: cfg.gen.clone(),
        rng: rng::RNG_ALGORITHM.to_string(),
        vocabulary_version: crate::composer::vocab::Vocabulary::builtin().version,
        files,
        sessions: generated.sessions.len(),
        discarded_users: generated.discarded,
        candidate_fallbacks: fallbacks,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "event=gen_data authors={} sessions={} triples={} out={}",
        latent.authors.len(),
        generated.sessions.len(),
        triples.len(),
        dir.display()
    );
    Ok(manifest)
}

fn http_settings(cfg: &RunConfig, endpoint: &str, model: &str) -> HttpSettings {
    HttpSettings {
        endpoint: endpoint.to_string(),
        model: model.to_string(),
        api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        timeout: Duration::from_secs_f64(cfg.composer.timeout_secs.max(0.001)),
        max_attempts: cfg.composer.max_attempts,
        retry_backoff: Duration::from_millis(cfg.composer.retry_backoff_ms),
    }
}

pub fn make_backend(cfg: &RunConfig) -> Box<dyn CompletionBackend> {
    let c = &cfg.composer;
    match c.backend {
        BackendKind::Mock => Box::new(MockBackend::builtin(c.dim, cfg.seed)),
        BackendKind::Http => Box::new(HttpBackend::new(http_settings(cfg, &c.endpoint, &c.model), c.accepts_images)),
    }
}

pub fn make_encoder(cfg: &RunConfig) -> Box<dyn TextEncoder> {
    let c = &cfg.composer;
    match c.encoder {
        EncoderKind::Hash => Box::new(HashingEncoder::new(c.dim)),
        EncoderKind::Http => Box::new(HttpEncoder::new(http_settings(cfg, &c.encoder_endpoint, &c.encoder_model), c.dim)),
    }
}

fn request_params(cfg: &RunConfig) -> RequestParams {
    RequestParams { model: cfg.composer.model.clone(), temperature: cfg.composer.temperature, seed: cfg.seed }
}

/// Loads the catalog, dropping authors without textual signal.
pub fn load_catalog(dir: &Path) -> Result<Catalog> {
    let records: Vec<AuthorRecord> = jsonl::read(dir.join(CATALOG_FILE))?;
    let report = validate_catalog(&records)?;
    for r in &report.rejected {
        log::warn!("event=author_rejected author_id={} reason={:?}", r.author_id, r.reason);
    }
    let keep: std::collections::HashSet<&str> = report.accepted.iter().map(String::as_str).collect();
    Ok(Catalog::new(records.into_iter().filter(|a| keep.contains(a.author_id.as_str())).collect())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComposeTargets {
    pub users: bool,
    pub authors: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    User,
    Author,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub kind: EmbeddingKind,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeSummary {
    pub preferences: usize,
    pub author_cards: usize,
}

pub fn compose(cfg: &RunConfig, targets: ComposeTargets, exec: Execution) -> Result<ComposeSummary> {
    let data = cfg.data_dir();
    ensure_dir(&cfg.out)?;
    let catalog = load_catalog(data)?;
    let backend = make_backend(cfg);
    let encoder = make_encoder(cfg);
    let mut composer = Composer::new(backend.as_ref(), encoder.as_ref());
    composer.params = request_params(cfg);
    composer.max_inflight = cfg.composer.max_inflight.max(1);
    composer.exec = exec;

    let mut summary = ComposeSummary::default();
    let mut embeddings = Vec::new();
    if targets.users {
        let sessions: Vec<TippingSession> = jsonl::read(data.join(SESSIONS_FILE))?;
        let profiles = composer.compose_all(&sessions, &catalog)?;
        embeddings.extend(profiles.iter().map(|p| EmbeddingRecord {
            id: p.user_id.clone(),
            kind: EmbeddingKind::User,
            vector: p.preference_embedding.clone(),
        }));
        jsonl::write(cfg.out.join(PREFERENCES_FILE), &profiles)?;
        summary.preferences = profiles.len();
    }
    if targets.authors {
        let cards = composer.describe_all(catalog.authors())?;
        embeddings.extend(cards.iter().map(|c| EmbeddingRecord {
            id: c.author_id.clone(),
            kind: EmbeddingKind::Author,
            vector: c.embedding.clone(),
        }));
        jsonl::write(cfg.out.join(AUTHOR_CARDS_FILE), &cards)?;
        summary.author_cards = cards.len();
    }
    jsonl::write(cfg.out.join(EMBEDDINGS_FILE), &embeddings)?;
    log::info!(
        "event=compose backend={} encoder={} preferences={} author_cards={}",
        backend.identifier(),
        encoder.identifier(),
        summary.preferences,
        summary.author_cards
    );
    Ok(summary)
}

/// Composed inputs needed to build recommendation contexts.
pub struct Workspace {
    pub preferences: HashMap<String, PreferenceProfile>,
    pub cards: HashMap<String, AuthorCard>,
    /// Card order as written, for a deterministic retrieval index.
    pub card_order: Vec<String>,
    pub sessions: Vec<TippingSession>,
    pub candidates: Vec<CandidateSet>,
    pub splits: Splits,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let data = cfg.data_dir();
        let profiles: Vec<PreferenceProfile> = jsonl::read(cfg.out.join(PREFERENCES_FILE))?;
        let cards: Vec<AuthorCard> = jsonl::read(cfg.out.join(AUTHOR_CARDS_FILE))?;
        Ok(Self {
            preferences: profiles.into_iter().map(|p| (p.user_id.clone(), p)).collect(),
            card_order: cards.iter().map(|c| c.author_id.clone()).collect(),
            cards: cards.into_iter().map(|c| (c.author_id.clone(), c)).collect(),
            sessions: jsonl::read(data.join(SESSIONS_FILE))?,
            candidates: jsonl::read(data.join(CANDIDATES_FILE))?,
            splits: read_json(&data.join(SPLITS_FILE))?,
        })
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.splits.train),
            "val" => Ok(&self.splits.val),
            "test" => Ok(&self.splits.test),
            other => Err(PipelineError::UnknownSplit(other.to_string())),
        }
    }

    pub fn context(&self, set: &CandidateSet) -> Result<TrainExample> {
        let preference = self
            .preferences
            .get(&set.session_ref)
            .ok_or_else(|| PipelineError::MissingEmbedding(set.session_ref.clone()))?
            .clone();
        let candidates = set
            .candidates
            .iter()
            .map(|id| {
                let card = self.cards.get(id).ok_or_else(|| PipelineError::MissingEmbedding(id.clone()))?;
                Ok(RecCandidate {
                    author_id: id.clone(),
                    feature_text: card.feature_text.clone(),
                    embedding: card.embedding.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainExample { context: RecContext { preference, candidates }, truth_index: set.truth_index })
    }

    pub fn candidate_set(&self, user: &str, m: usize) -> Result<&CandidateSet> {
        if !self.sessions.iter().any(|s| s.user_id == user) {
            return Err(PipelineError::SessionNotFound(user.to_string()));
        }
        self.candidates
            .iter()
            .find(|c| c.session_ref == user && c.m() == m)
            .ok_or_else(|| PipelineError::NoCandidates { session: user.to_string(), m })
    }

    /// Contexts for every user of `split` with a candidate set of size `m`,
    /// in split order.
    pub fn examples(&self, split: &str, m: usize) -> Result<Vec<TrainExample>> {
        let by_user: HashMap<&str, &CandidateSet> =
            self.candidates.iter().filter(|c| c.m() == m).map(|c| (c.session_ref.as_str(), c)).collect();
        self.split(split)?
            .iter()
            .filter_map(|u| by_user.get(u.as_str()))
            .map(|set| self.context(set))
            .collect()
    }

    pub fn author_index(&self) -> Result<VectorIndex> {
        Ok(VectorIndex::build(self.card_order.iter().map(|id| (id.clone(), self.cards[id].embedding.clone())))?)
    }
}

/// Fraction of examples whose greedy choice is the truth.
pub fn greedy_accuracy(policy: &LinearSoftmaxPolicy, examples: &[TrainExample], exec: Execution) -> Result<f64> {
    if examples.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let picks = exec::try_map(exec, examples, |_, ex| policy.greedy(&ex.context))?;
    let truths: Vec<usize> = examples.iter().map(|e| e.truth_index).collect();
    Ok(metrics::acc_at_m(&picks, &truths)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub stats: Vec<TrainStats>,
    pub curve: Vec<CurvePoint>,
    pub policy: LinearSoftmaxPolicy,
}

impl TrainSummary {
    /// First evaluated step whose held-out accuracy reaches `threshold`.
    pub fn step_to(&self, threshold: f64) -> Option<usize> {
        self.curve.iter().find(|p| p.accuracy >= threshold).map(|p| p.step)
    }
}

pub fn train(cfg: &RunConfig, exec: Execution) -> Result<TrainSummary> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let ws = Workspace::load(cfg)?;
    let dataset = ws.examples("train", cfg.train.m)?;
    let held_out = ws.examples(&cfg.train.eval_split, cfg.train.m)?;
    let dim = dataset.first().map_or(cfg.composer.dim, |e| e.context.preference.preference_embedding.len());
    let initial = LinearSoftmaxPolicy::identity(dim, cfg.train.tau)?;
    let reward = CandidateReward { weights: cfg.reward.weights()?, required_phrases: cfg.reward.required_phrases.clone() };
    let mut curve = Vec::new();
    let mut hook_error = None;
    let mut hook = |step: usize, p: &LinearSoftmaxPolicy| {
        if held_out.is_empty() || hook_error.is_some() {
            return;
        }
        match greedy_accuracy(p, &held_out, exec) {
            Ok(accuracy) => {
                log::info!("event=eval step={step} split={} accuracy={accuracy:.4}", cfg.train.eval_split);
                curve.push(CurvePoint { step, accuracy });
            }
            Err(e) => hook_error = Some(e),
        }
    };
    let (policy, stats) = grpo::train(&initial, &dataset, &reward, &cfg.grpo, exec, Some(&mut hook))?;
    if let Some(e) = hook_error {
        return Err(e);
    }
    write_json(&cfg.out.join(POLICY_FILE), &policy.checkpoint())?;
    jsonl::write(cfg.out.join(TRAIN_STATS_FILE), &stats)?;
    jsonl::write(cfg.out.join(EVAL_CURVE_FILE), &curve)?;
    log::info!("event=train steps={} examples={} out={}", stats.len(), dataset.len(), cfg.out.display());
    Ok(TrainSummary { stats, curve, policy })
}

pub fn load_policy(cfg: &RunConfig, dim: usize) -> Result<LinearSoftmaxPolicy> {
    let path = cfg.out.join(POLICY_FILE);
    let trained = || -> Result<LinearSoftmaxPolicy> {
        let ckpt: PolicyCheckpoint = read_json(&path)?;
        Ok(LinearSoftmaxPolicy::from_checkpoint(&ckpt)?)
    };
    let policy = match cfg.eval.policy {
        PolicySource::Trained => trained()?,
        PolicySource::Identity => LinearSoftmaxPolicy::identity(dim, cfg.train.tau)?,
        PolicySource::Auto if path.exists() => trained()?,
        PolicySource::Auto => LinearSoftmaxPolicy::identity(dim, cfg.train.tau)?,
    };
    log::info!("event=policy_loaded source={:?} trained={}", cfg.eval.policy, path.exists());
    Ok(policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecommendMode {
    Policy,
    Backend,
}

pub fn recommend(cfg: &RunConfig, user: &str, m: usize, mode: RecommendMode) -> Result<Recommendation> {
    let ws = Workspace::load(cfg)?;
    let set = ws.candidate_set(user, m)?;
    let ex = ws.context(set)?;
    let (output, raw) = match mode {
        RecommendMode::Policy => {
            let policy = load_policy(cfg, ex.context.preference.preference_embedding.len())?;
            let out = policy.recommend(&ex.context)?;
            let raw = out.explanation.clone();
            (out, raw)
        }
        RecommendMode::Backend => {
            let backend = make_backend(cfg);
            llm_policy_recommend(&ex.context, backend.as_ref(), &request_params(cfg), 3)?
        }
    };
    Ok(Recommendation {
        chosen: ex.context.candidates[output.choice_index].author_id.clone(),
        explanation: output.explanation,
        raw_output: raw,
    })
}

pub fn eval_u2a(cfg: &RunConfig, exec: Execution) -> Result<EvalReport> {
    cfg.validate()?;
    let ws = Workspace::load(cfg)?;
    let split = cfg.eval.split.as_str();
    let users = ws.split(split)?;
    let dim = ws.cards.values().next().map_or(cfg.composer.dim, |c| c.embedding.len());
    let policy = load_policy(cfg, dim)?;
    let mut report = EvalReport::default();

    for &m in &cfg.eval.m_values {
        let examples = ws.examples(split, m)?;
        if examples.is_empty() {
            log::warn!("event=eval_skip m={m} reason=no_candidate_sets");
            continue;
        }
        report.acc_m.insert(m.to_string(), greedy_accuracy(&policy, &examples, exec)?);
        report.counts.candidate_sets.insert(m.to_string(), examples.len());
    }

    // Full-catalog retrieval with the transformed preference as query.
    let index = ws.author_index()?;
    let truth_of: HashMap<&str, &str> =
        ws.sessions.iter().map(|s| (s.user_id.as_str(), s.ground_truth.as_str())).collect();
    let mut queries = Vec::new();
    let mut truths = Vec::new();
    for u in users {
        let (Some(p), Some(t)) = (ws.preferences.get(u), truth_of.get(u.as_str())) else { continue };
        let q = policy.transform_query(&p.preference_embedding)?;
        queries.push(crate::linalg::normalized(q).ok_or_else(|| PipelineError::MissingEmbedding(u.clone()))?);
        truths.push(t.to_string());
    }
    if !queries.is_empty() {
        let k_max = cfg.eval.k_values.iter().chain(&cfg.eval.hit_rate_k).copied().max().unwrap_or(1);
        let ranked = index.top_k_batch(&queries, k_max, exec)?;
        for &k in &cfg.eval.k_values {
            report.recall_at_k.insert(k.to_string(), metrics::recall_at_k(&ranked, &truths, k)?);
            report.ndcg_at_k.insert(k.to_string(), metrics::ndcg_at_k(&ranked, &truths, k)?);
        }
        for &k in &cfg.eval.hit_rate_k {
            report.hit_rate_at_k.insert(k.to_string(), metrics::recall_at_k(&ranked, &truths, k)?);
        }
    }

    // AUC over the largest candidate sets: the truth is the positive.
    if let Some(&m) = cfg.eval.m_values.iter().max() {
        let mut pairs = Vec::new();
        for ex in ws.examples(split, m)? {
            let scores = policy.score_candidates(&ex.context)?;
            for (j, (c, s)) in ex.context.candidates.iter().zip(scores).enumerate() {
                pairs.push(ScoredPair {
                    user: ex.context.preference.user_id.clone(),
                    item: c.author_id.clone(),
                    score: s,
                    label: u8::from(j == ex.truth_index),
                });
            }
        }
        if !pairs.is_empty() {
            let (auc, uauc) = metrics::auc_uauc(&pairs)?;
            report.auc = Some(auc);
            report.uauc = Some(uauc);
            report.counts.auc_pairs = pairs.len();
        }
    }
    report.counts.catalog = ws.cards.len();
    report.counts.retrieval_pool = index.len();
    report.counts.u2a_sessions = queries.len();
    write_json(&cfg.out.join(EVAL_U2A_FILE), &report)?;
    log::info!("event=eval_u2a split={split} sessions={}", queries.len());
    Ok(report)
}

pub fn eval_a2a(cfg: &RunConfig) -> Result<EvalReport> {
    let triples: Vec<SimilarityTriple> = jsonl::read(cfg.data_dir().join(TRIPLES_FILE))?;
    let cards: Vec<AuthorCard> = jsonl::read(cfg.out.join(AUTHOR_CARDS_FILE))?;
    let embeddings: HashMap<String, Vec<f64>> = cards.into_iter().map(|c| (c.author_id, c.embedding)).collect();
    let rate = metrics::alignment_rate(&triples, &embeddings)?;
    let report = EvalReport {
        alignment_rate: Some(rate),
        counts: metrics::Counts { catalog: embeddings.len(), triples: triples.len(), ..Default::default() },
        ..Default::default()
    };
    write_json(&cfg.out.join(EVAL_A2A_FILE), &report)?;
    log::info!("event=eval_a2a triples={} alignment_rate={rate:.4}", triples.len());
    Ok(report)
}

/// Nearest authors to a user preference or an author card.
pub fn retrieve(cfg: &RunConfig, query_id: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let ws = Workspace::load(cfg)?;
    let index = ws.author_index()?;
    let query = if let Some(p) = ws.preferences.get(query_id) {
        p.preference_embedding.clone()
    } else if let Some(c) = ws.cards.get(query_id) {
        c.embedding.clone()
    } else {
        return Err(PipelineError::MissingEmbedding(query_id.to_string()));
    };
    Ok(index.top_k(&query, k)?)
}

/// Merges whichever evaluation outputs exist into one report.
pub fn report(cfg: &RunConfig) -> Result<EvalReport> {
    let mut merged: Option<EvalReport> = None;
    for name in [EVAL_U2A_FILE, EVAL_A2A_FILE] {
        let path = cfg.out.join(name);
        if path.exists() {
            let part: EvalReport = read_json(&path)?;
            merged = Some(match merged {
                Some(m) => m.merge(part),
                None => part,
            });
        }
    }
    let report = merged.ok_or_else(|| PipelineError::NothingToReport(cfg.out.clone()))?;
    write_json(&cfg.out.join(REPORT_FILE), &report)?;
    let md = cfg.out.join(REPORT_MD_FILE);
    std::fs::write(&md, report.to_markdown()).map_err(io_err(&md))?;
    Ok(report)
}
