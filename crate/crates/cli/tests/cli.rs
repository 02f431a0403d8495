use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 8] = [
    "--set",
    "gen.num_authors=160",
    "--set",
    "gen.num_users=300",
    "--set",
    "gen.num_triples=60",
    "--seed",
    "3",
];

fn mspa(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    assert!(mspa(dir.path(), &["gen-data"]).status.success());
    assert!(mspa(dir.path(), &["compose"]).status.success());
    dir
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_mspa")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_mspa")).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mspa(dir.path(), &["gen-data", "--set", "grpo.group_size=1"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(mspa(a.path(), &["gen-data"]).status.success());
    assert!(mspa(b.path(), &["gen-data"]).status.success());
    for name in ["catalog.jsonl", "sessions.jsonl", "candidates.jsonl", "triples.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_session_exits_with_data_error() {
    let dir = prepared();
    let out = mspa(dir.path(), &["recommend", "--session", "u77777"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u77777"));
}

#[test]
fn missing_inputs_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mspa(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn baseline_evaluation_beats_random() {
    let dir = prepared();
    let out = mspa(dir.path(), &["eval-u2a", "--set", "eval.split=test", "--set", "eval.policy=identity"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval_u2a.json")).unwrap()).unwrap();
    assert!(report["acc_m"]["4"].as_f64().unwrap() > 0.25, "{report}");
}

#[test]
fn retrieve_prints_ranked_lines() {
    let dir = prepared();
    let out = mspa(dir.path(), &["retrieve", "--query", "a00001", "--k", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("1\ta00001\t"), "{text}");
}
