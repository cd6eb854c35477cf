use std::path::Path;
use std::process::{Command, Output};

fn ppd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppd")).current_dir(dir).args(args).output().expect("ppd runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ppd(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_fit_evaluate_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.jsonl", "--n-patients", "400"]);
    assert!(d.join("data.truth.json").exists());
    ok(d, &["fit", "--data", "data.jsonl", "--out", "model.json"]);
    let stdout = ok(d, &["evaluate", "--model", "model.json", "--data", "data.jsonl", "--out", "report.csv"]);
    assert!(stdout.contains("mc:k=2"));
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(csv.starts_with("repeat,seed,model,policy"));
    assert_eq!(csv.lines().count(), 1 + 6);

    ok(d, &["report", "--rows", "report.csv", "--out", "summary.csv"]);
    assert!(std::fs::read_to_string(d.join("summary.csv")).unwrap().lines().count() == 7);
}

#[test]
fn k_zero_is_rejected_with_the_valid_range() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.jsonl", "--n-patients", "200", "--seed", "4"]);
    ok(d, &["fit", "--data", "data.jsonl", "--out", "model.json"]);
    let out = ppd(d, &["evaluate", "--model", "model.json", "--data", "data.jsonl", "--policy", "mc:k=0"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("[1, 4]"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn baseline_model_exports_three_trees() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.jsonl", "--n-patients", "300"]);
    ok(d, &["fit", "--data", "data.jsonl", "--model", "dtbls", "--out", "model.json"]);
    ok(d, &["export", "--model", "model.json", "--out", "trees"]);
    for name in ["baseline", "switch", "treatment"] {
        let dot = std::fs::read_to_string(d.join("trees").join(format!("{name}.dot"))).unwrap();
        assert!(dot.starts_with("digraph"), "{dot}");
    }
    ok(d, &["export", "--model", "model.json", "--format", "json", "--out", "json"]);
    assert!(d.join("json").join("switch.json").exists());
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.toml"),
        "n_repeats = 2\nn_hyperparam_candidates = 3\npolicies = [\"behavior\", \"mc:k=1\"]\n\n[source]\nkind = \"episodic\"\nn_patients = 300\n",
    )
    .unwrap();
    ok(d, &["run", "--config", "exp.toml", "--seed", "5", "--out", "a"]);
    ok(d, &["run", "--config", "exp.toml", "--seed", "5", "--out", "b"]);
    for f in ["rows.csv", "summary.csv", "per_k.csv"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppd(dir.path(), &["fit", "--data", "missing.jsonl"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:") && err.trim_end().lines().count() == 1, "{err}");
    std::fs::write(dir.path().join("bad.toml"), "n_repeats = 0\n").unwrap();
    assert!(!ppd(dir.path(), &["run", "--config", "bad.toml"]).status.success());
}
