use mspa_core::config::{PolicySource, RunConfig};
use mspa_core::grpo::{
    compute_advantages, grpo_step, kl_penalty, objective_gradient, sample_groups, surrogate_objective, CandidateReward,
    GrpoConfig, TrainExample,
};
use mspa_core::metrics::{auc_uauc, hit_rate_at_k, ndcg_at_k, recall_at_k, ScoredPair, VectorIndex};
use mspa_core::pipeline::{self, ComposeTargets, TrainSummary};
use mspa_core::policy::{LinearSoftmaxPolicy, RecCandidate, RecContext};
use mspa_core::rewards::{combine, RewardWeights};
use mspa_core::synth;
use mspa_core::types::{PreferenceProfile, Provenance};
use mspa_core::Execution;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn example(r: &mut ChaCha8Rng, d: usize, m: usize) -> TrainExample {
    let candidates = (0..m)
        .map(|j| RecCandidate { author_id: format!("a{j}"), feature_text: format!("card {j}"), embedding: unit(r, d) })
        .collect();
    let preference = PreferenceProfile {
        user_id: "u".into(),
        preference_text: "prefers things".into(),
        preference_embedding: unit(r, d),
        provenance: Provenance { backend: "test".into(), encoder: "test".into(), prompt_hash: String::new() },
    };
    TrainExample { context: RecContext { preference, candidates }, truth_index: r.random_range(0..m) }
}

fn random_policy(r: &mut ChaCha8Rng, d: usize, tau: f64, noise: f64) -> LinearSoftmaxPolicy {
    let w = Array2::from_shape_fn((d, d), |(i, j)| f64::from(u8::from(i == j)) + r.random_range(-noise..noise));
    LinearSoftmaxPolicy::new(w, tau).unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn advantages() -> Verdict {
    let mut r = rng(1);
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut uniform_ok = true;
    let ((), took) = timed(|| {
        for i in 0..10_000 {
            let g = [2, 4, 8, 16][i % 4];
            let rewards: Vec<f64> = match i % 5 {
                0 => (0..g).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect(),
                1 => vec![r.random_range(0.0..1.0); g],
                2 => (0..g).map(|_| 0.7 + 1e-6 * r.random_range(-1.0..1.0)).collect(),
                _ => (0..g).map(|_| r.random_range(0.0..1.0)).collect(),
            };
            let a = compute_advantages(&rewards, 1e-8).unwrap();
            let mu = rewards.iter().sum::<f64>() / g as f64;
            let sd = (rewards.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / g as f64).sqrt();
            if sd < 1e-8 {
                uniform_ok &= a.iter().all(|&x| x == 0.0);
                continue;
            }
            let am = a.iter().sum::<f64>() / g as f64;
            let asd = (a.iter().map(|x| (x - am).powi(2)).sum::<f64>() / g as f64).sqrt();
            worst_mean = worst_mean.max(am.abs());
            worst_std = worst_std.max((asd - 1.0).abs());
        }
    });
    check(
        worst_mean <= 1e-12 && worst_std <= 1e-6 && uniform_ok && took < Duration::from_secs(5),
        format!("max |mean|={worst_mean:.2e} max |std-1|={worst_std:.2e} uniform_zero={uniform_ok} in {took:.2?}"),
    )
}

fn kl() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut positive = true;
    let mut self_zero = true;
    let ((), took) = timed(|| {
        for _ in 0..10_000 {
            let a: f64 = r.random_range(-20.0..0.0);
            let b: f64 = r.random_range(-20.0..0.0);
            self_zero &= kl_penalty(a, a).unwrap() == 0.0;
            if a == b {
                continue;
            }
            let got = kl_penalty(a, b).unwrap();
            let rho = (b - a).exp();
            let direct = rho - rho.ln() - 1.0;
            positive &= got > 0.0;
            worst = worst.max((got - direct).abs() / direct.abs().max(1.0));
        }
    });
    check(
        self_zero && positive && worst <= 1e-12 && took < Duration::from_secs(5),
        format!("self_zero={self_zero} positive={positive} max scaled err={worst:.2e} in {took:.2?}"),
    )
}

fn finite_difference() -> Verdict {
    let mut r = rng(3);
    let d = 4;
    let mut worst: f64 = 0.0;
    let ((), took) = timed(|| {
        for i in 0..100 {
            let m = if i % 2 == 0 { 2 } else { 4 };
            let examples: Vec<TrainExample> = (0..3).map(|_| example(&mut r, d, m)).collect();
            let batch: Vec<&TrainExample> = examples.iter().collect();
            let cfg = GrpoConfig {
                group_size: 4,
                clip_eps: Some(0.2),
                kl_beta: 0.04,
                seed: i as u64,
                ..GrpoConfig::default()
            };
            let old = random_policy(&mut r, d, 0.5, 0.3);
            let reference = random_policy(&mut r, d, 0.5, 0.3);
            let reward = CandidateReward::new(RewardWeights::default());
            let groups = sample_groups(&old, &reference, &batch, &reward, &cfg, 0, Execution::Sequential).unwrap();
            let current = random_policy(&mut r, d, 0.5, 0.3);
            let analytic = objective_gradient(&current, &batch, &groups, &cfg, Execution::Sequential).unwrap();
            let h = 1e-6;
            let mut fd = Array2::<f64>::zeros((d, d));
            for a in 0..d {
                for b in 0..d {
                    let shifted = |s: f64| {
                        let mut w = current.weights().clone();
                        w[[a, b]] += s;
                        let p = LinearSoftmaxPolicy::new(w, current.tau()).unwrap();
                        surrogate_objective(&p, &batch, &groups, &cfg).unwrap()
                    };
                    fd[[a, b]] = (shifted(h) - shifted(-h)) / (2.0 * h);
                }
            }
            let diff = (&analytic - &fd).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-8);
            worst = worst.max(diff / scale);
        }
    });
    check(
        worst < 1e-4 && took < Duration::from_secs(30),
        format!("max relative error={worst:.2e} over 100 instances in {took:.2?}"),
    )
}

/// Plain REINFORCE with a mean baseline normalised by the population std,
/// computed from the sampled choices and their rewards.
fn reinforce_update(w: &Array2<f64>, tau: f64, examples: &[&TrainExample], picks: &[Vec<(usize, f64)>], lr: f64) -> Array2<f64> {
    let d = w.nrows();
    let mut grad = Array2::<f64>::zeros((d, d));
    let mut n = 0usize;
    for (ex, group) in examples.iter().zip(picks) {
        let u = &ex.context.preference.preference_embedding;
        let q: Vec<f64> = (0..d).map(|j| (0..d).map(|i| u[i] * w[[i, j]]).sum()).collect();
        let scores: Vec<f64> =
            ex.context.candidates.iter().map(|c| q.iter().zip(&c.embedding).map(|(a, b)| a * b).sum::<f64>() / tau).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        let probs: Vec<f64> = scores.iter().map(|s| (s - top).exp() / z).collect();
        let mean_v: Vec<f64> =
            (0..d).map(|j| ex.context.candidates.iter().zip(&probs).map(|(c, p)| p * c.embedding[j]).sum()).collect();
        let g = group.len() as f64;
        let mu = group.iter().map(|x| x.1).sum::<f64>() / g;
        let sd = (group.iter().map(|x| (x.1 - mu).powi(2)).sum::<f64>() / g).sqrt();
        for &(choice, reward) in group {
            n += 1;
            if sd < 1e-8 {
                continue;
            }
            let adv = (reward - mu) / sd;
            let v = &ex.context.candidates[choice].embedding;
            for i in 0..d {
                for j in 0..d {
                    grad[[i, j]] += adv * u[i] * (v[j] - mean_v[j]) / tau;
                }
            }
        }
    }
    w + &(grad * (lr / n as f64))
}

fn reinforce_equivalence() -> Verdict {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    let mut informative = 0;
    for i in 0..50 {
        let d = 8;
        let m = r.random_range(2..=5);
        let examples: Vec<TrainExample> = (0..r.random_range(1..=4)).map(|_| example(&mut r, d, m)).collect();
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let cfg = GrpoConfig {
            group_size: 2,
            clip_eps: Some(0.2),
            kl_beta: 0.0,
            learning_rate: 0.1,
            seed: i,
            batch_size: batch.len(),
            ..GrpoConfig::default()
        };
        let policy = random_policy(&mut r, d, 0.3, 0.5);
        let reward = CandidateReward::new(RewardWeights::default());
        let out = grpo_step(&policy, &policy, &batch, &reward, &cfg, 0, Execution::Sequential).unwrap();
        let picks: Vec<Vec<(usize, f64)>> = out
            .groups
            .iter()
            .map(|g| g.outputs.iter().zip(&g.rewards).map(|(o, rw)| (o.choice_index, rw.combined)).collect())
            .collect();
        informative += picks.iter().filter(|g| g[0].1 != g[1].1).count();
        let ordered: Vec<&TrainExample> = out.groups.iter().map(|g| batch[g.context_ref]).collect();
        let expected = reinforce_update(policy.weights(), policy.tau(), &ordered, &picks, cfg.learning_rate);
        let diff = (&expected - out.policy.weights()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(diff);
    }
    check(
        worst <= 1e-10 && informative > 0,
        format!("max |ΔW| diff={worst:.2e} over 50 instances ({informative} groups with distinct rewards)"),
    )
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    baseline_acc4: f64,
    full: Run,
    alignment: f64,
    latent_alignment: f64,
}

struct Run {
    summary: TrainSummary,
    acc4: f64,
    took: Duration,
}

fn fixture_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(0);
    cfg.out = out.to_path_buf();
    cfg
}

fn acc4(cfg: &RunConfig, source: PolicySource) -> f64 {
    let mut cfg = cfg.clone();
    cfg.eval.split = "test".into();
    cfg.eval.policy = source;
    pipeline::eval_u2a(&cfg, Execution::default()).unwrap().acc_m["4"]
}

fn train_in(cfg: &RunConfig) -> Run {
    let (summary, took) = timed(|| pipeline::train(cfg, Execution::default()).unwrap());
    let acc4 = acc4(cfg, PolicySource::Trained);
    Run { summary, acc4, took }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("full");
        let cfg = fixture_config(&data);
        pipeline::gen_data(&cfg).unwrap();
        pipeline::compose(&cfg, ComposeTargets { users: true, authors: true }, Execution::default()).unwrap();
        let baseline_acc4 = acc4(&cfg, PolicySource::Identity);
        let full = train_in(&cfg);
        let alignment = pipeline::eval_a2a(&cfg).unwrap().alignment_rate.unwrap();
        let latent = synth::gen_catalog(&cfg.gen).unwrap();
        let triples = synth::gen_triples(&latent, cfg.gen.num_triples, &cfg.gen).unwrap();
        let latent_alignment = mspa_core::metrics::alignment_rate(&triples, &latent.latents()).unwrap();
        Fixture { _dir: dir, data, baseline_acc4, full, alignment, latent_alignment }
    })
}

fn trained_beats_baseline() -> Verdict {
    let fx = fixture();
    let trained = fx.full.acc4;
    check(
        trained >= 0.55 && trained >= fx.baseline_acc4 + 0.10 && fx.full.took < Duration::from_secs(300),
        format!("test Acc@4 baseline={:.4} trained={trained:.4} train time {:.2?}", fx.baseline_acc4, fx.full.took),
    )
}

fn reward_ablation() -> Verdict {
    let fx = fixture();
    let out = fx.data.with_file_name("ablated");
    let mut cfg = fixture_config(&out);
    cfg.paths.data_dir = Some(fx.data.clone());
    std::fs::create_dir_all(&out).unwrap();
    for name in [pipeline::PREFERENCES_FILE, pipeline::AUTHOR_CARDS_FILE, pipeline::EMBEDDINGS_FILE] {
        std::fs::copy(fx.data.join(name), out.join(name)).unwrap();
    }
    cfg.reward.lambda1 = 0.5;
    cfg.reward.lambda2 = 0.5;
    let ablated = train_in(&cfg);
    let threshold = 0.45;
    let full_step = fx.full.summary.step_to(threshold);
    let ablated_step = ablated.summary.step_to(threshold);
    let faster = match (full_step, ablated_step) {
        (Some(f), Some(a)) => f <= a,
        (Some(_), None) => true,
        (None, _) => false,
    };
    check(
        fx.full.acc4 >= ablated.acc4 - 0.02 && faster,
        format!(
            "final Acc@4 full={:.4} ablated={:.4}; steps to {threshold} full={full_step:?} ablated={ablated_step:?}",
            fx.full.acc4, ablated.acc4
        ),
    )
}

fn brute_top(ids: &[String], vecs: &[Vec<f64>], q: &[f64], k: usize) -> Vec<String> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum();
        let nb: f64 = b.iter().map(|x| x * x).sum();
        dot / (na * nb).sqrt()
    };
    let mut all: Vec<(f64, &String)> = vecs.iter().zip(ids).map(|(v, id)| (cos(q, v), id)).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    all.into_iter().take(k).map(|(_, id)| id.clone()).collect()
}

fn brute_auc(pairs: &[&ScoredPair]) -> Option<f64> {
    let pos: Vec<f64> = pairs.iter().filter(|p| p.label == 1).map(|p| p.score).collect();
    let neg: Vec<f64> = pairs.iter().filter(|p| p.label == 0).map(|p| p.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut credit = 0.0;
    for p in &pos {
        for n in &neg {
            credit += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    Some(credit / (pos.len() * neg.len()) as f64)
}

fn metric_oracles() -> Verdict {
    let mut r = rng(7);
    let mut mismatches = Vec::new();
    for inst in 0..1000 {
        let d = r.random_range(2..6);
        let n = r.random_range(3..30);
        let ids: Vec<String> = (0..n).map(|i| format!("a{:03}", (i * 7919 + inst) % 1000)).collect();
        let mut vecs: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| f64::from(r.random_range(-3i8..=3))).collect()).collect();
        for v in vecs.iter_mut().filter(|v| v.iter().all(|x| *x == 0.0)) {
            v[0] = 1.0;
        }
        // Duplicates force exact score ties.
        for i in 1..n {
            if r.random_bool(0.2) {
                vecs[i] = vecs[i - 1].clone();
            }
        }
        let index = match VectorIndex::build(ids.iter().cloned().zip(vecs.iter().cloned())) {
            Ok(ix) => ix,
            Err(_) => continue,
        };
        let users = r.random_range(1..8);
        let queries: Vec<Vec<f64>> = (0..users).map(|_| unit(&mut r, d)).collect();
        let truths: Vec<String> = (0..users).map(|_| ids[r.random_range(0..n)].clone()).collect();
        let k = r.random_range(1..=n + 2);
        let ranked: Vec<Vec<String>> = queries.iter().map(|q| brute_top(&ids, &vecs, q, k)).collect();
        let got: Vec<Vec<String>> = queries.iter().map(|q| index.top_k(q, k).unwrap().into_iter().map(|x| x.0).collect()).collect();
        if got != ranked {
            mismatches.push(format!("top_k #{inst}"));
        }
        let ranks: Vec<Option<usize>> =
            ranked.iter().zip(&truths).map(|(rk, t)| rk.iter().position(|x| x == t).map(|p| p + 1)).collect();
        let recall = ranks.iter().filter(|x| x.is_some()).count() as f64 / users as f64;
        let ndcg = ranks.iter().flatten().map(|&p| 1.0 / ((p + 1) as f64).log2()).sum::<f64>() / users as f64;
        if recall_at_k(&ranked, &truths, k).unwrap() != recall {
            mismatches.push(format!("recall #{inst}"));
        }
        if (ndcg_at_k(&ranked, &truths, k).unwrap() - ndcg).abs() > 1e-12 {
            mismatches.push(format!("ndcg #{inst}"));
        }
        if hit_rate_at_k(&index, &queries, &truths, k, Execution::default()).unwrap() != recall {
            mismatches.push(format!("hit_rate #{inst}"));
        }

        let pairs: Vec<ScoredPair> = (0..r.random_range(2..40))
            .map(|_| ScoredPair {
                user: format!("u{}", r.random_range(0..4)),
                item: "x".into(),
                score: f64::from(r.random_range(0..6u8)) / 5.0,
                label: u8::from(r.random_bool(0.4)),
            })
            .collect();
        let all: Vec<&ScoredPair> = pairs.iter().collect();
        let mut by_user: BTreeMap<&str, Vec<&ScoredPair>> = BTreeMap::new();
        for p in &pairs {
            by_user.entry(&p.user).or_default().push(p);
        }
        let per_user: Vec<f64> = by_user.values().filter_map(|ps| brute_auc(ps)).collect();
        match (auc_uauc(&pairs), brute_auc(&all)) {
            (Ok((auc, uauc)), Some(expected)) => {
                let expected_uauc = if per_user.is_empty() { f64::NAN } else { per_user.iter().sum::<f64>() / per_user.len() as f64 };
                let same = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12;
                if !same(auc, expected) || !same(uauc, expected_uauc) {
                    mismatches.push(format!("auc #{inst}"));
                }
            }
            (Err(_), None) => {}
            _ => mismatches.push(format!("auc class check #{inst}")),
        }
    }
    let mut closed_form = true;
    for rank in 1..=20usize {
        let ranked = vec![(0..20).map(|i| if i + 1 == rank { "t".to_string() } else { format!("x{i}") }).collect::<Vec<_>>()];
        let got = ndcg_at_k(&ranked, &["t"], 20).unwrap();
        closed_form &= (got - 1.0 / ((rank + 1) as f64).log2()).abs() <= 1e-15;
        closed_form &= ndcg_at_k(&ranked, &["t"], rank - 1).map_or(true, |v| v == 0.0);
    }
    mismatches.truncate(5);
    check(
        mismatches.is_empty() && closed_form,
        format!("1000 instances, mismatches={mismatches:?}, single-relevant closed form={closed_form}"),
    )
}

/// Alignment of mock-card embeddings on the default fixture, recorded from a
/// pilot run before the threshold was enforced.
const PILOT_ALIGNMENT: f64 = 0.898;

fn alignment() -> Verdict {
    let fx = fixture();
    check(
        fx.latent_alignment == 1.0 && fx.alignment >= 0.80 && (fx.alignment - PILOT_ALIGNMENT).abs() < 1e-9,
        format!("latent={:.4} cards={:.4} (pinned {PILOT_ALIGNMENT})", fx.latent_alignment, fx.alignment),
    )
}

fn cli_run(out: &Path) -> Vec<u8> {
    let steps: [&[&str]; 6] = [&["gen-data"], &["compose"], &["train"], &["eval-u2a"], &["eval-a2a"], &["report"]];
    for args in steps {
        let status = Command::new(env!("CARGO_BIN_EXE_mspa"))
            .args(args)
            .arg("--out")
            .arg(out)
            .args(["--seed", "11", "--set", "gen.num_authors=160", "--set", "gen.num_users=300"])
            .args(["--set", "gen.num_triples=60", "--set", "grpo.steps=30", "--set", "grpo.eval_every=10"])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "{args:?} failed: {status}");
    }
    std::fs::read(out.join(pipeline::REPORT_FILE)).unwrap()
}

fn end_to_end_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let first = cli_run(&dir.path().join("one"));
    let second = cli_run(&dir.path().join("two"));
    check(first == second && !first.is_empty(), format!("eval_report.json {} bytes, identical={}", first.len(), first == second))
}

fn reward_combination() -> Verdict {
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let l1 = r.random_range(0.0..1.0);
        let l2 = r.random_range(0.0..(1.0 - l1));
        let w = RewardWeights::new(l1, l2).unwrap();
        let (a, f, s) = (f64::from(u8::from(r.random_bool(0.5))), f64::from(u8::from(r.random_bool(0.5))), r.random_range(0.0..1.0));
        let expected = l1 * a + l2 * f + (1.0 - l1 - l2) * s;
        worst = worst.max((combine(a, f, s, &w).combined - expected).abs());
    }
    let perfect = combine(1.0, 1.0, 1.0, &RewardWeights::default()).combined;
    check(worst <= 1e-12 && perfect == 1.0, format!("max |err|={worst:.2e} over 1e4 triples, correct choice R={perfect}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("advantage normalisation", advantages),
        ("kl penalty", kl),
        ("finite-difference gradient", finite_difference),
        ("reinforce equivalence", reinforce_equivalence),
        ("trained policy beats baseline", trained_beats_baseline),
        ("reward ablation", reward_ablation),
        ("metric oracles", metric_oracles),
        ("author alignment", alignment),
        ("end-to-end determinism", end_to_end_determinism),
        ("reward combination", reward_combination),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
