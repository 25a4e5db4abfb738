use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
n_speakers = 40
dev_speakers = 10
source_speakers = 30
n_pairs = 200
source.learning_rate = 0.1
source.epochs = 2
si.learning_rate = 0.1
si.epochs = 2
adapt.learning_rate = 0.1
adapt.epochs = 2
adapt.max_iterations = 2
cluster.n_init = 2
";

fn spkadapt(dir: &Path, args: &[&str]) -> Output {
    fs::write(dir.join("small.conf"), SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_spkadapt"))
        .args(args)
        .args(["--config", "small.conf", "--out", "run"])
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spkadapt(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn single_line_error(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    err
}

#[test]
fn generate_writes_manifests_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(dir.path(), &["generate"]);
    let run = dir.path().join("run");
    for name in [
        "source.tsv",
        "A_train.tsv",
        "A_dev.tsv",
        "D_train.tsv",
        "I_train.tsv",
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    assert!(run.join("generate.conf").is_file());
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    assert!(!rows.is_empty());
    for row in &rows {
        let n = |i: usize| row[i].parse::<f64>().unwrap();
        assert!(n(2) >= n(3) && n(4) >= n(5) && n(6) >= n(7), "{row:?}");
    }
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        ok(dir, &["generate", "--seed", "5"]);
        ok(dir, &["prepare", "--seed", "5"]);
    }
    for name in [
        "A_train.tsv",
        "A_train_f1.tsv",
        "A_test_trials.tsv",
        "prepare.conf",
    ] {
        let x = fs::read(a.path().join("run").join(name)).unwrap();
        let y = fs::read(b.path().join("run").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn missing_inputs_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let err = single_line_error(&spkadapt(dir.path(), &["prepare"]));
    assert!(err.starts_with("error: "), "{err}");
    let err = single_line_error(&spkadapt(dir.path(), &["eval", "--method", "adapt-II"]));
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn bad_flags_and_config_keys_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = spkadapt(dir.path(), &["generate", "--nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    single_line_error(&out);
    fs::write(dir.path().join("bad.conf"), "n_speakers = many\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spkadapt"))
        .args(["generate", "--config", "bad.conf"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    let err = single_line_error(&out);
    assert!(err.contains("bad.conf"), "{err}");
}

#[test]
fn prepare_check_and_infeasible_fraction() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"]);
    let log = ok(dir.path(), &["prepare", "--check"]);
    assert!(log.contains("prefix check passed"), "{log}");
    // 1% of 30 training speakers is a single speaker: no non-target pairs
    let err = single_line_error(&spkadapt(dir.path(), &["prepare", "--fraction", "0.01"]));
    assert!(err.contains("non-target"), "{err}");
}

#[test]
fn full_pipeline_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate"]);
    ok(d, &["prepare"]);
    ok(d, &["train-si", "--source"]);
    ok(d, &["adapt", "--technique", "I", "--clustering", "ahc"]);
    let report = fs::read_to_string(d.join("run/A_adapt-I_f1_report.jsonl")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert!(lines.len() >= 3, "{report}");
    let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert!(last["stop_reason"].is_string());
    let baseline = ok(d, &["eval", "--baseline"]);
    let adapted = ok(d, &["eval", "--method", "adapt-I"]);
    for line in [&baseline, &adapted] {
        let eer: f64 = line
            .trim()
            .strip_prefix("eer=")
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&eer), "{line}");
    }
    assert!(d.join("run/A_baseline_cosine_scores.tsv").is_file());
}
