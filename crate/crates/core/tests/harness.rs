use std::fs;
use std::path::{Path, PathBuf};

use coordlab::engine::{ExecutionTrace, FinalProbability};
use coordlab::fixture::SyntheticPoolParams;
use coordlab::harness::{
    cmd_analyze, cmd_fixture_build, cmd_fixture_synth, cmd_run, cmd_score, parse_date, trace_path,
    ExperimentConfig, HarnessError, LEADERBOARD_COLUMNS, NOT_DETECTABLE,
};
use coordlab::reference::{build_reference, ConfigParams, REFERENCE_NAMES};
use tempfile::TempDir;

fn build_fixture(dir: &Path, target: usize) -> PathBuf {
    let pool = dir.join("pool.jsonl");
    cmd_fixture_synth(&SyntheticPoolParams::default(), 42, &pool).unwrap();
    let fixture = dir.join("fixture.jsonl");
    cmd_fixture_build(&pool, parse_date("2025-08-16").unwrap(), target, 42, false, &fixture).unwrap();
    fixture
}

fn config(dir: &Path, fixture: &Path, workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        workers,
        ..ExperimentConfig::new(fixture, dir.join("run"), 42)
    }
}

fn count_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn trace_bytes(cfg: &ExperimentConfig) -> Vec<String> {
    REFERENCE_NAMES
        .iter()
        .map(|n| fs::read_to_string(trace_path(&cfg.out_dir, n)).unwrap())
        .collect()
}

#[test]
fn full_run_then_resume_after_interruption() {
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 100);
    let cfg = config(tmp.path(), &fixture, 4);
    let summary = cmd_run(&cfg).unwrap();
    assert_eq!(summary.new_records, 500);
    assert_eq!(summary.total, 500);
    let complete = trace_bytes(&cfg);

    // Keep 300 records overall, plus a torn final line in one file.
    let keep = [100, 100, 60, 40, 0];
    for (name, k) in REFERENCE_NAMES.iter().zip(keep) {
        let path = trace_path(&cfg.out_dir, name);
        let text = fs::read_to_string(&path).unwrap();
        let mut kept: String = text.lines().take(k).map(|l| format!("{l}\n")).collect();
        if k == 40 {
            kept.push_str("{\"spec_name\":\"sequen");
        }
        fs::write(&path, kept).unwrap();
    }
    let summary = cmd_run(&cfg).unwrap();
    assert_eq!(summary.new_records, 200);
    assert_eq!(summary.skipped, 300);
    assert_eq!(summary.total, 500);
    assert_eq!(trace_bytes(&cfg), complete);

    let again = cmd_run(&cfg).unwrap();
    assert_eq!(again.new_records, 0);
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 30);
    let one = config(&tmp.path().join("a"), &fixture, 1);
    let many = config(&tmp.path().join("b"), &fixture, 6);
    cmd_run(&one).unwrap();
    cmd_run(&many).unwrap();
    assert_eq!(trace_bytes(&one), trace_bytes(&many));
}

#[test]
fn edited_spec_file_breaks_resume() {
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 12);
    let spec_path = tmp.path().join("ensemble.toml");
    let spec = build_reference("independent_ensemble", &ConfigParams::default()).unwrap();
    fs::write(&spec_path, spec.to_toml().unwrap()).unwrap();
    let cfg = ExperimentConfig {
        specs: vec![spec_path.to_string_lossy().into_owned()],
        ..config(tmp.path(), &fixture, 2)
    };
    assert_eq!(cmd_run(&cfg).unwrap().total, 12);
    assert!(count_lines(&cfg.out_dir.join("traces/independent_ensemble.jsonl")) == 12);

    let mut edited = spec.clone();
    edited.agents[0].role_instruction.push_str(" Be brief.");
    fs::write(&spec_path, edited.to_toml().unwrap()).unwrap();
    let err = cmd_run(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::ManifestMismatch(_)));
    assert!(err.to_string().contains("fixture or spec changed since manifest"));

    // A different seed is refused the same way.
    fs::write(&spec_path, spec.to_toml().unwrap()).unwrap();
    let reseeded = ExperimentConfig { seed: 7, ..cfg.clone() };
    assert_eq!(cmd_run(&reseeded).unwrap_err().kind(), "manifest_mismatch");
    assert_eq!(cmd_run(&cfg).unwrap().new_records, 0);
}

#[test]
fn missing_inputs_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), &tmp.path().join("nope.jsonl"), 1);
    assert_eq!(cmd_run(&cfg).unwrap_err().kind(), "config");
    let fixture = build_fixture(tmp.path(), 12);
    let cfg = ExperimentConfig {
        specs: vec!["hierarchy".into()],
        ..config(tmp.path(), &fixture, 1)
    };
    assert_eq!(cmd_run(&cfg).unwrap_err().kind(), "spec");
}

fn rewrite_traces(path: &Path, edit: impl Fn(usize, &mut ExecutionTrace)) {
    let text = fs::read_to_string(path).unwrap();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let mut t = ExecutionTrace::from_json_line(line).unwrap();
        edit(i, &mut t);
        out.push_str(&t.to_json_line());
        out.push('\n');
    }
    fs::write(path, out).unwrap();
}

#[test]
fn score_and_analyze() {
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 100);
    let cfg = config(tmp.path(), &fixture, 4);
    cmd_run(&cfg).unwrap();

    // Six fallbacks spread over three configs.
    for (name, idx) in [
        ("independent_ensemble", vec![3usize, 50]),
        ("peer_critique_debate", vec![7, 8, 9]),
        ("consensus_alignment", vec![99]),
    ] {
        rewrite_traces(&trace_path(&cfg.out_dir, name), |i, t| {
            if idx.contains(&i) {
                t.final_probability = FinalProbability::Fallback(0.5);
            }
        });
    }

    let score_dir = tmp.path().join("score");
    let rows = cmd_score(&cfg.out_dir, &fixture, &score_dir).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().map(|r| r.n_failures).sum::<usize>(), 6);
    let ensemble = &rows[0];
    assert_eq!(ensemble.config, "independent_ensemble");
    assert_eq!(ensemble.n_failures, 2);
    let b = ensemble.brier.unwrap();
    assert!((ensemble.unc.unwrap() + ensemble.rel.unwrap() - ensemble.res.unwrap() - b).abs() < 0.05);

    let csv = fs::read_to_string(score_dir.join("leaderboard.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), LEADERBOARD_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 7);
    let cats = fs::read_to_string(score_dir.join("per_category.csv")).unwrap();
    assert!(cats.starts_with("config,convention,crypto,economics,entertainment,geopolitics,politics,sports,overall\n"));
    assert_eq!(cats.lines().count(), 1 + 2 * 6);
    let murphy: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(score_dir.join("murphy.json")).unwrap()).unwrap();
    let first = &murphy[0]["reports"];
    for binning in ["fixed", "equal_mass"] {
        for k in ["5", "10", "20"] {
            assert!(first[binning][k]["brier"].is_number(), "{binning} {k}");
        }
    }

    let report = cmd_analyze(&score_dir).unwrap();
    assert_eq!(report.pairs.len(), 10);
    assert_eq!(report.n_common, 94);
    assert!((report.bonferroni_threshold - 0.005).abs() < 1e-15);
    assert_eq!(report.disagreements.len(), 5);
    assert!(!report.frontier.is_empty());
    for pair in &report.pairs {
        assert_eq!(pair.n, 94);
        assert_eq!(pair.required_n.len(), 3);
        let boot = pair.bootstrap.as_ref().unwrap();
        assert_eq!(boot.n_resamples, 10_000);
        assert!(boot.ci95.0 <= pair.diff && pair.diff <= boot.ci95.1);
    }
    let first_bytes = fs::read(score_dir.join("analysis.json")).unwrap();
    cmd_analyze(&score_dir).unwrap();
    assert_eq!(fs::read(score_dir.join("analysis.json")).unwrap(), first_bytes);
}

#[test]
fn scoring_refuses_bad_trace_dirs() {
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 12);
    let empty = tmp.path().join("empty");
    fs::create_dir_all(empty.join("traces")).unwrap();
    let err = cmd_score(&empty, &fixture, &tmp.path().join("s0")).unwrap_err();
    assert_eq!(err.kind(), "no_traces");

    let cfg = ExperimentConfig {
        specs: vec!["sequential_pipeline".into()],
        ..config(tmp.path(), &fixture, 2)
    };
    cmd_run(&cfg).unwrap();
    rewrite_traces(&trace_path(&cfg.out_dir, "sequential_pipeline"), |i, t| {
        if i < 2 {
            t.market_id = format!("ghost-{i}");
        }
    });
    match cmd_score(&cfg.out_dir, &fixture, &tmp.path().join("s1")) {
        Err(HarnessError::OrphanTraces(ids)) => assert_eq!(ids, ["ghost-0", "ghost-1"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn analysis_needs_two_configs() {
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 12);
    let cfg = ExperimentConfig {
        specs: vec!["sequential_pipeline".into()],
        ..config(tmp.path(), &fixture, 2)
    };
    cmd_run(&cfg).unwrap();
    let score_dir = tmp.path().join("score");
    cmd_score(&cfg.out_dir, &fixture, &score_dir).unwrap();
    assert_eq!(cmd_analyze(&score_dir).unwrap_err().kind(), "too_few_configs");
}

#[test]
fn identical_configs_are_not_sized() {
    // Two spec files that differ only in name forecast identically.
    let tmp = TempDir::new().unwrap();
    let fixture = build_fixture(tmp.path(), 12);
    let mut specs = Vec::new();
    for name in ["left", "right"] {
        let mut s = build_reference("independent_ensemble", &ConfigParams::default()).unwrap();
        s.name = name.into();
        let path = tmp.path().join(format!("{name}.toml"));
        fs::write(&path, s.to_toml().unwrap()).unwrap();
        specs.push(path.to_string_lossy().into_owned());
    }
    let cfg = ExperimentConfig {
        specs,
        ..config(tmp.path(), &fixture, 2)
    };
    cmd_run(&cfg).unwrap();
    let score_dir = tmp.path().join("score");
    cmd_score(&cfg.out_dir, &fixture, &score_dir).unwrap();
    let report = cmd_analyze(&score_dir).unwrap();
    let pair = &report.pairs[0];
    assert_eq!(pair.diff, 0.0);
    for r in &pair.required_n {
        assert_eq!(r.note.as_deref(), Some(NOT_DETECTABLE));
    }
}
