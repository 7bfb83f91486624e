use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn coordlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coordlab")).args(args).output().unwrap()
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn end_to_end() {
    let tmp = TempDir::new().unwrap();
    let pool = tmp.path().join("pool.jsonl");
    let fixture = tmp.path().join("fixture.jsonl");
    let run = tmp.path().join("run");

    let v = ok(&coordlab(&["fixture", "synth", "--n", "600", "--seed", "3", "--clean", "--out", p(&pool)]));
    assert_eq!(v["markets"], 600);
    let v = ok(&coordlab(&[
        "fixture", "build", "--pool", p(&pool), "--cutoff", "2025-08-16", "--target", "24", "--seed", "3", "--out",
        p(&fixture),
    ]));
    assert_eq!(v["fixture"]["n_markets"], 24);
    assert!(tmp.path().join("fixture.jsonl.stats.json").exists());

    let v = ok(&coordlab(&[
        "run", "--fixture", p(&fixture), "--seed", "3", "--out", p(&run), "--specs",
        "independent_ensemble,sequential_pipeline", "--workers", "2",
    ]));
    assert_eq!(v["total"], 48);
    let v = ok(&coordlab(&["score", "--run", p(&run), "--fixture", p(&fixture)]));
    assert_eq!(v["leaderboard"].as_array().unwrap().len(), 3);
    let v = ok(&coordlab(&["analyze", "--score", p(&run.join("score"))]));
    assert_eq!(v["pairs"], 1);
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let tmp = TempDir::new().unwrap();
    let out = coordlab(&["analyze", "--score", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");

    let out = coordlab(&["run", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    let out = coordlab(&[
        "run", "--fixture", p(&tmp.path().join("missing.jsonl")), "--seed", "1", "--out", p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}
