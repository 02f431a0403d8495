//! Synthetic catalogs, tipping sessions, candidate sets and similarity
//! triples.
//!
//! Every author and user owns a unit latent vector in `latent_dim`
//! dimensions, drawn around one of `clusters` random centroids. Author text
//! is templated from the cluster vocabulary: the author's three best-matching
//! cluster keywords, a scene on one side of a per-cluster scene axis, and the
//! cluster's region (usually). Users tip authors without replacement with
//! probability proportional to `exp(β_gen · p·z)`; the last tip is the
//! ground truth. `β_gen` alone controls how learnable the task is.
//!
//! All randomness comes from named substreams of the seed, indexed by author,
//! user, session or triple, so output is a pure function of [`GenConfig`].

use crate::composer::vocab::Vocabulary;
use crate::linalg;
use crate::rng::{self, StreamRng};
use crate::types::{AuthorRecord, CandidateSet, SimilarityTriple, TippingSession, VisualRef, MIN_HISTORY};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;

/// Candidates examined per side when picking a triple.
pub const TRIPLE_POOL: usize = 10;
/// Attempts before giving up on the triple margin.
pub const TRIPLE_RETRIES: usize = 50;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("catalog has {have} authors but sessions need up to {need}")]
    CatalogTooSmall { have: usize, need: usize },
    #[error("triple margin {margin} unreachable after {TRIPLE_RETRIES} resamples; try a lower margin")]
    MarginUnreachable { margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_authors: usize,
    pub num_users: usize,
    pub clusters: usize,
    pub latent_dim: usize,
    /// Inclusive range for the number of tips per user (history + truth).
    pub session_len_range: [usize; 2],
    pub m_values: Vec<usize>,
    /// `β_gen`: sharpness of tipping choices around the user's latent.
    pub signal_strength: f64,
    /// train : val : test.
    pub split_ratios: [f64; 3],
    /// Dimension of the per-cluster subspace in which authors and users
    /// deviate from their centroid.
    pub style_dim: usize,
    /// Norm of the offset between an author latent and its centroid.
    pub author_noise: f64,
    pub user_noise: f64,
    pub keyword_noise: f64,
    pub keywords_per_author: usize,
    /// Leading keywords of each cluster vocabulary that authors draw from.
    pub keywords_per_cluster: usize,
    /// Stretch of the scene axis in author and user style directions.
    pub scene_weight: f64,
    /// Leading scene words of each setting that captions draw from.
    pub scenes_per_setting: usize,
    pub primary_region_prob: f64,
    pub num_triples: usize,
    pub triple_margin: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_authors: 400,
            num_users: 2858,
            clusters: 8,
            latent_dim: 32,
            session_len_range: [4, 10],
            m_values: vec![4, 10],
            signal_strength: 8.0,
            split_ratios: [0.7, 0.2, 0.1],
            style_dim: 3,
            author_noise: 1.6,
            user_noise: 1.6,
            keyword_noise: 0.6,
            keywords_per_author: 1,
            keywords_per_cluster: 16,
            scene_weight: 4.0,
            scenes_per_setting: 2,
            primary_region_prob: 0.85,
            num_triples: 500,
            triple_margin: 0.2,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |m: String| Err(GenError::Config(m));
        let [lo, hi] = self.session_len_range;
        if lo < MIN_HISTORY || hi < lo {
            return fail(format!("session_len_range [{lo}, {hi}] needs {MIN_HISTORY} <= min <= max"));
        }
        if self.clusters == 0 || self.latent_dim < 2 {
            return fail("need at least one cluster and latent_dim >= 2".into());
        }
        if self.style_dim == 0 || self.style_dim >= self.latent_dim {
            return fail(format!("style_dim must lie in [1, latent_dim), got {}", self.style_dim));
        }
        if self.num_authors < self.clusters {
            return fail("fewer authors than clusters".into());
        }
        if self.m_values.iter().any(|&m| m < 2) {
            return fail("every m must be at least 2".into());
        }
        if !self.signal_strength.is_finite() || self.signal_strength < 0.0 {
            return fail("signal_strength must be finite and non-negative".into());
        }
        let total: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| *r < 0.0) || (total - 1.0).abs() > 1e-9 {
            return fail(format!("split ratios must be non-negative and sum to 1, got {total}"));
        }
        for (name, v) in [("author_noise", self.author_noise), ("user_noise", self.user_noise), ("keyword_noise", self.keyword_noise), ("scene_weight", self.scene_weight)] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.primary_region_prob) {
            return fail("primary_region_prob must lie in [0, 1]".into());
        }
        if self.keywords_per_author > self.keywords_per_cluster {
            return fail("keywords_per_author exceeds keywords_per_cluster".into());
        }
        if self.keywords_per_author == 0 || self.triple_margin.is_nan() || self.triple_margin < 0.0 {
            return fail("keywords_per_author must be positive and triple_margin non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentAuthor {
    pub record: AuthorRecord,
    pub z: Vec<f64>,
    pub cluster: usize,
    /// Norm of `z`'s offset from its centroid before normalisation.
    pub noise_norm: f64,
    pub indoor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCatalog {
    pub centroids: Vec<Vec<f64>>,
    /// Orthonormal style basis of each cluster, orthogonal to its centroid.
    pub style_axes: Vec<Vec<Vec<f64>>>,
    pub authors: Vec<LatentAuthor>,
}

impl LatentCatalog {
    pub fn records(&self) -> Vec<AuthorRecord> {
        self.authors.iter().map(|a| a.record.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.authors.iter().position(|a| a.record.author_id == id)
    }

    pub fn latents(&self) -> std::collections::HashMap<String, Vec<f64>> {
        self.authors.iter().map(|a| (a.record.author_id.clone(), a.z.clone())).collect()
    }
}

fn gaussian(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        if let Some(v) = linalg::normalized(gaussian(rng, dim)) {
            return v;
        }
    }
}

/// `normalize(center + scale · d)` for a random unit `d` in the span of
/// `axes`, with the first coordinate of `d` stretched by `lead` before
/// renormalizing.
fn perturb(rng: &mut StreamRng, center: &[f64], axes: &[Vec<f64>], scale: f64, lead: f64) -> Vec<f64> {
    let mut coef = unit(rng, axes.len());
    if axes.len() > 1 && lead != 1.0 {
        coef[0] *= lead;
        coef = linalg::normalized(coef).unwrap_or_else(|| unit_axis(axes.len()));
    }
    let mut v = center.to_vec();
    for (a, w) in axes.iter().zip(&coef) {
        v.iter_mut().zip(a).for_each(|(x, ai)| *x += scale * w * ai);
    }
    linalg::normalized(v).unwrap_or_else(|| center.to_vec())
}

fn unit_axis(dim: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[0] = 1.0;
    e
}

/// Unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_unit(rng: &mut StreamRng, basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        for b in basis {
            let proj = linalg::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, bi)| *x -= proj * bi);
        }
        if let Some(v) = linalg::normalized(v) {
            return v;
        }
    }
}

pub fn author_id(index: usize) -> String {
    format!("a{index:05}")
}

pub fn user_id(index: usize) -> String {
    format!("u{index:05}")
}

struct ClusterModel {
    centroid: Vec<f64>,
    /// The first style axis decides the scene.
    style_axes: Vec<Vec<f64>>,
    keyword_axes: Vec<Vec<f64>>,
}

/// Centroids and style axes are mutually orthogonal across clusters while
/// `latent_dim` has room for them; after that each cluster is only
/// orthogonalized internally.
fn cluster_models(cfg: &GenConfig, vocab: &Vocabulary) -> Vec<ClusterModel> {
    let per_cluster = 1 + cfg.style_dim;
    let mut taken: Vec<Vec<f64>> = Vec::new();
    (0..cfg.clusters)
        .map(|c| {
            let mut r = rng::stream(cfg.seed, "gen/cluster", &[c as u64]);
            if taken.len() + per_cluster > cfg.latent_dim {
                taken.clear();
            }
            let start = taken.len();
            for _ in 0..per_cluster {
                let axis = orthogonal_unit(&mut r, &taken, cfg.latent_dim);
                taken.push(axis);
            }
            let centroid = taken[start].clone();
            let style_axes = taken[start + 1..].to_vec();
            let n_kw = vocab.clusters[c % vocab.clusters.len()].keywords.len().min(cfg.keywords_per_cluster);
            // Keywords vary along the axes after the scene axis when there are any.
            let kw_span = if style_axes.len() > 1 { &style_axes[1..] } else { &style_axes[..] };
            let keyword_axes = (0..n_kw).map(|_| perturb(&mut r, &centroid, kw_span, cfg.keyword_noise, 1.0)).collect();
            ClusterModel { centroid, style_axes, keyword_axes }
        })
        .collect()
}

fn pick<'a>(r: &mut StreamRng, xs: &'a [String]) -> &'a str {
    xs.choose(r).map(String::as_str).unwrap_or("")
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

#[allow(clippy::too_many_arguments)]
fn template_author(
    r: &mut StreamRng,
    vocab: &Vocabulary,
    index: usize,
    cluster: usize,
    keywords: &[&str],
    indoor: bool,
    region: &str,
    scene_count: usize,
) -> AuthorRecord {
    let cv = &vocab.clusters[cluster % vocab.clusters.len()];
    let id = author_id(index);
    let nick = format!("{}{}", capitalise(pick(r, &vocab.syllables)), pick(r, &vocab.syllables));
    let all = if indoor { &vocab.scenes.indoor } else { &vocab.scenes.outdoor };
    let scenes = &all[..scene_count.clamp(1, all.len())];
    let scene = pick(r, scenes).to_string();
    let kw = |i: usize| keywords[i % keywords.len()];
    let filler = |r: &mut StreamRng| pick(r, &vocab.filler).to_string();
    let textual_profile = format!("{nick} streams {} from {region}.", cv.theme);
    let visuals = vec![
        VisualRef {
            path: format!("images/{id}_0.jpg"),
            caption: Some(format!("{} costume, {} in the {scene}", pick(r, &vocab.looks), kw(0))),
        },
        VisualRef {
            path: format!("images/{id}_1.jpg"),
            caption: Some(format!("{} {} moment at the {scene}", pick(r, &vocab.looks), kw(1))),
        },
    ];
    let topics = if keywords.len() > 2 { format!("{} and {}", kw(0), kw(2)) } else { kw(0).to_string() };
    let audio_text = format!("{} tonight we do {topics}, {}", filler(r), filler(r));
    let comments = vec![format!("{} {}", filler(r), kw(1)), format!("{} {}", filler(r), filler(r)), filler(r)];
    AuthorRecord {
        author_id: id,
        textual_profile,
        visuals,
        audio_text,
        comments,
        region: Some(region.to_string()),
    }
}

pub fn gen_catalog(cfg: &GenConfig) -> Result<LatentCatalog, GenError> {
    cfg.validate()?;
    let vocab = Vocabulary::builtin();
    let models = cluster_models(cfg, vocab);
    let authors = (0..cfg.num_authors)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, "gen/author", &[i as u64]);
            let cluster = i % cfg.clusters;
            let m = &models[cluster];
            let z = perturb(&mut r, &m.centroid, &m.style_axes, cfg.author_noise, cfg.scene_weight);
            let cv = &vocab.clusters[cluster % vocab.clusters.len()];
            let mut ranked: Vec<(usize, f64)> =
                m.keyword_axes.iter().enumerate().map(|(k, ax)| (k, linalg::dot(ax, &z))).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let keywords: Vec<&str> =
                ranked.iter().take(cfg.keywords_per_author).map(|(k, _)| cv.keywords[*k].as_str()).collect();
            let indoor = linalg::dot(&z, &m.style_axes[0]) >= 0.0;
            let region = if r.random::<f64>() < cfg.primary_region_prob {
                cv.region.clone()
            } else {
                let others: Vec<String> =
                    vocab.clusters.iter().filter(|c| c.region != cv.region).map(|c| c.region.clone()).collect();
                if others.is_empty() { cv.region.clone() } else { pick(&mut r, &others).to_string() }
            };
            let record = template_author(&mut r, vocab, i, cluster, &keywords, indoor, &region, cfg.scenes_per_setting);
            LatentAuthor { record, z, cluster, noise_norm: cfg.author_noise, indoor }
        })
        .collect();
    let (centroids, style_axes) = models.into_iter().map(|m| (m.centroid, m.style_axes)).unzip();
    Ok(LatentCatalog { centroids, style_axes, authors })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSessions {
    pub sessions: Vec<TippingSession>,
    /// Latent cluster of each emitted session's user.
    pub user_clusters: Vec<usize>,
    pub splits: Splits,
    pub discarded: usize,
}

/// Splits users by sorting on a hash of their id, with exact 7:2:1-style
/// counts.
pub fn split_users(user_ids: &[String], ratios: [f64; 3]) -> Splits {
    let mut keyed: Vec<(String, &String)> =
        user_ids.iter().map(|u| (hex::encode(Sha256::digest(u.as_bytes())), u)).collect();
    keyed.sort();
    let n = user_ids.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let ids: Vec<String> = keyed.into_iter().map(|(_, u)| u.clone()).collect();
    Splits {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    }
}

/// `n` distinct indices drawn sequentially without replacement with
/// probability proportional to `exp(logits)` (Gumbel top-n).
fn sample_without_replacement(r: &mut StreamRng, logits: &[f64], n: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let u: f64 = r.random_range(f64::MIN_POSITIVE..1.0);
            (l - (-u.ln()).ln(), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(n).map(|(_, i)| i).collect()
}

pub fn gen_sessions(catalog: &LatentCatalog, cfg: &GenConfig) -> Result<GeneratedSessions, GenError> {
    cfg.validate()?;
    let [lo, hi] = cfg.session_len_range;
    if catalog.authors.len() < hi {
        return Err(GenError::CatalogTooSmall { have: catalog.authors.len(), need: hi });
    }
    let mut sessions = Vec::new();
    let mut user_clusters = Vec::new();
    let mut discarded = 0;
    for u in 0..cfg.num_users {
        let mut r = rng::stream(cfg.seed, "gen/user", &[u as u64]);
        let cluster = r.random_range(0..catalog.centroids.len());
        let p = perturb(&mut r, &catalog.centroids[cluster], &catalog.style_axes[cluster], cfg.user_noise, cfg.scene_weight);
        let n = r.random_range(lo..=hi);
        let logits: Vec<f64> = catalog.authors.iter().map(|a| cfg.signal_strength * linalg::dot(&p, &a.z)).collect();
        let tips = sample_without_replacement(&mut r, &logits, n);
        let (truth, history) = tips.split_last().expect("n >= 3");
        if history.len() < MIN_HISTORY {
            discarded += 1;
            continue;
        }
        sessions.push(TippingSession {
            user_id: user_id(u),
            history: history.iter().map(|&i| catalog.authors[i].record.author_id.clone()).collect(),
            ground_truth: catalog.authors[*truth].record.author_id.clone(),
        });
        user_clusters.push(cluster);
    }
    let ids: Vec<String> = sessions.iter().map(|s| s.user_id.clone()).collect();
    let splits = split_users(&ids, cfg.split_ratios);
    Ok(GeneratedSessions { sessions, user_clusters, splits, discarded })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeneratedCandidates {
    pub sets: Vec<CandidateSet>,
    /// Sets whose hard or easy pool ran short and were topped up uniformly.
    pub fallback_warnings: usize,
}

/// One candidate set of size `m` per session: the truth, `⌊(m−1)/2⌋` hard
/// negatives from the truth's cluster and the rest from other clusters,
/// shuffled. History authors are never used as distractors unless the
/// catalog leaves no alternative.
pub fn gen_candidate_sets(
    sessions: &[TippingSession],
    catalog: &LatentCatalog,
    m: usize,
    cfg: &GenConfig,
) -> Result<GeneratedCandidates, GenError> {
    if catalog.authors.len() < m {
        return Err(GenError::CatalogTooSmall { have: catalog.authors.len(), need: m });
    }
    if m < 2 {
        return Err(GenError::Config(format!("m must be at least 2, got {m}")));
    }
    let mut out = GeneratedCandidates::default();
    for (s, session) in sessions.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, "gen/candidates", &[s as u64, m as u64]);
        let truth = catalog
            .position(&session.ground_truth)
            .ok_or_else(|| GenError::Config(format!("unknown author {}", session.ground_truth)))?;
        let truth_cluster = catalog.authors[truth].cluster;
        let history: HashSet<&str> = session.history.iter().map(String::as_str).collect();
        let eligible = |i: usize| i != truth && !history.contains(catalog.authors[i].record.author_id.as_str());
        let hard_pool: Vec<usize> =
            (0..catalog.authors.len()).filter(|&i| eligible(i) && catalog.authors[i].cluster == truth_cluster).collect();
        let easy_pool: Vec<usize> =
            (0..catalog.authors.len()).filter(|&i| eligible(i) && catalog.authors[i].cluster != truth_cluster).collect();
        let n_hard = (m - 1) / 2;
        let n_easy = m - 1 - n_hard;
        let draw = |r: &mut StreamRng, pool: &[usize], k: usize| -> Vec<usize> {
            index::sample(r, pool.len(), k.min(pool.len())).into_iter().map(|j| pool[j]).collect()
        };
        let mut chosen = draw(&mut r, &hard_pool, n_hard);
        chosen.extend(draw(&mut r, &easy_pool, n_easy));
        if chosen.len() < m - 1 {
            out.fallback_warnings += 1;
            let taken: HashSet<usize> = chosen.iter().copied().collect();
            let mut rest: Vec<usize> = (0..catalog.authors.len()).filter(|&i| eligible(i) && !taken.contains(&i)).collect();
            if rest.len() < m - 1 - chosen.len() {
                rest = (0..catalog.authors.len()).filter(|&i| i != truth && !taken.contains(&i)).collect();
            }
            let need = m - 1 - chosen.len();
            chosen.extend(draw(&mut r, &rest, need));
        }
        chosen.push(truth);
        chosen.shuffle(&mut r);
        let truth_index = chosen.iter().position(|&i| i == truth).expect("truth was inserted");
        out.sets.push(CandidateSet {
            session_ref: session.user_id.clone(),
            candidates: chosen.iter().map(|&i| catalog.authors[i].record.author_id.clone()).collect(),
            truth_index,
        });
    }
    if out.fallback_warnings > 0 {
        log::warn!("event=candidate_fallback m={m} sets={}", out.fallback_warnings);
    }
    Ok(out)
}

/// Triples whose latent cosines differ by at least `cfg.triple_margin`.
pub fn gen_triples(catalog: &LatentCatalog, count: usize, cfg: &GenConfig) -> Result<Vec<SimilarityTriple>, GenError> {
    let n = catalog.authors.len();
    if n < 3 {
        return Err(GenError::CatalogTooSmall { have: n, need: 3 });
    }
    let cos = |a: usize, b: usize| linalg::cosine(&catalog.authors[a].z, &catalog.authors[b].z);
    (0..count)
        .map(|t| {
            let mut r = rng::stream(cfg.seed, "gen/triples", &[t as u64]);
            for _ in 0..TRIPLE_RETRIES {
                let anchor = r.random_range(0..n);
                let cluster = catalog.authors[anchor].cluster;
                let same: Vec<usize> = (0..n).filter(|&i| i != anchor && catalog.authors[i].cluster == cluster).collect();
                let other: Vec<usize> = (0..n).filter(|&i| catalog.authors[i].cluster != cluster).collect();
                if same.is_empty() || other.is_empty() {
                    continue;
                }
                let sample = |r: &mut StreamRng, pool: &[usize]| -> Vec<usize> {
                    let mut v: Vec<usize> =
                        index::sample(r, pool.len(), TRIPLE_POOL.min(pool.len())).into_iter().map(|j| pool[j]).collect();
                    v.sort_unstable();
                    v
                };
                let closer = sample(&mut r, &same)
                    .into_iter()
                    .fold(None::<(usize, f64)>, |best, i| match best {
                        Some((_, c)) if c >= cos(anchor, i) => best,
                        _ => Some((i, cos(anchor, i))),
                    })
                    .expect("non-empty pool");
                let farther = sample(&mut r, &other)
                    .into_iter()
                    .fold(None::<(usize, f64)>, |best, i| match best {
                        Some((_, c)) if c <= cos(anchor, i) => best,
                        _ => Some((i, cos(anchor, i))),
                    })
                    .expect("non-empty pool");
                if closer.1 - farther.1 >= cfg.triple_margin && closer.1 > farther.1 {
                    let id = |i: usize| catalog.authors[i].record.author_id.clone();
                    return Ok(SimilarityTriple { anchor: id(anchor), closer: id(closer.0), farther: id(farther.0) });
                }
            }
            Err(GenError::MarginUnreachable { margin: cfg.triple_margin })
        })
        .collect()
}
