use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use jsonschema::JSONSchema;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_curvewalk");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("CURVEWALK_THREADS").output().expect("spawn curvewalk")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap_or(-1)
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn validate(schema: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(schema);
    let schema_doc = read(&path);
    let compiled = JSONSchema::compile(&schema_doc).unwrap_or_else(|e| panic!("{schema}: {e}"));
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("{schema} rejects {doc}: {msgs:?}");
}

/// One small classification run shared by the tests below.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        stdout(&[
            "train",
            "--config",
            "toy",
            "--points",
            "64",
            "--train-per-class",
            "3",
            "--test-per-class",
            "1",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--lr",
            "0.02",
            "--votes",
            "2",
            "--out",
            s(&out),
        ]);
        dir
    })
    .path()
    .join("run")
    .leak()
}

const SMALL_TRAIN: &[&str] = &["train", "--config", "toy", "--points", "64", "--train-per-class", "2", "--test-per-class", "1"];

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = s(&out);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["train", "--out", o, "--no-such-flag"]), 2);
    assert_eq!(code(&["--threads", "0", "gradcheck", "--list"]), 2);
    assert_eq!(code(&["gradcheck", "--only", "nope"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", s(&dir.path().join("missing.cwt"))]), 2);
    let with = |extra: &[&str]| {
        let mut a = SMALL_TRAIN.to_vec();
        a.extend_from_slice(&["--epochs", "1"]);
        a.extend_from_slice(extra);
        a.extend_from_slice(&["--out", o]);
        code(&a)
    };
    assert_eq!(with(&["--curves", "8,8@5"]), 2);
    assert_eq!(with(&["--curves", "8,8"]), 2);
    assert_eq!(with(&["--curves", "100,8@1"]), 2);
    assert_eq!(with(&["--theta-bar", "200"]), 2);
    assert_eq!(with(&["--batch", "0"]), 2);
    assert_eq!(with(&["--classes", "cone"]), 2);
    assert_eq!(with(&["--data", s(&dir.path().join("no-such-root"))]), 2);
    assert_eq!(code(&["analyze-curves", "--shape", "cone", "--out", o]), 2);
    assert_eq!(code(&["analyze-curves", "--points", "8", "--k", "8", "--out", o]), 2);
    assert_eq!(code(&["bench", "--iters", "0"]), 2);
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
    let list = stdout(&["gradcheck", "--list"]);
    assert!(list.lines().any(|l| l == "cic"), "{list}");
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = trained();
    // a corrupt checkpoint next to a valid manifest
    std::fs::copy(run_dir.join("manifest.json"), dir.path().join("manifest.json")).unwrap();
    std::fs::write(dir.path().join("bad.cwt"), b"garbage").unwrap();
    assert_eq!(code(&["eval", "--checkpoint", s(&dir.path().join("bad.cwt"))]), 1);
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div");
    let mut a = SMALL_TRAIN.to_vec();
    a.extend_from_slice(&["--epochs", "3", "--lr", "1e8", "--out", s(&out)]);
    assert_eq!(code(&a), 3);
    let m = read(&out.join("manifest.json"));
    assert_eq!(m["status"], "diverged");
    validate("manifest.schema.json", &m);
}

#[test]
fn training_artifacts_match_their_schemas() {
    let dir = trained();
    let manifest = read(&dir.join("manifest.json"));
    validate("manifest.schema.json", &manifest);
    assert_eq!(manifest["status"], "ok");
    let artifacts: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in ["init.cwt", "best.cwt", "last.cwt", "metrics.jsonl", "summary.json"] {
        assert!(artifacts.contains(&f), "{f} missing from {artifacts:?}");
        assert!(dir.join(f).exists());
    }
    let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        validate("metrics-line.schema.json", &serde_json::from_str(line).unwrap());
    }
    let summary = read(&dir.join("summary.json"));
    validate("summary.schema.json", &summary);
    assert_eq!(summary["metric"], "accuracy");
    assert_eq!(summary["final_eval"]["votes"], 2);
}

#[test]
fn eval_reproduces_the_logged_metric() {
    let dir = trained();
    let report: Value = serde_json::from_str(stdout(&["eval", "--checkpoint", s(&dir.join("last.cwt"))]).trim()).unwrap();
    validate("eval.schema.json", &report);
    let last = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    let last: Value = serde_json::from_str(last.lines().last().unwrap()).unwrap();
    assert_eq!(report["metric"], last["val_metric"]);
    assert_eq!(report["n_samples"], 4);
    let train: Value =
        serde_json::from_str(stdout(&["eval", "--checkpoint", s(&dir.join("last.cwt")), "--split", "train"]).trim()).unwrap();
    assert_eq!(train["n_samples"], 12);
    assert_eq!(train["split"], "train");
}

#[test]
fn gradcheck_lines_match_their_schemas() {
    let out = stdout(&["gradcheck", "--only", "matmul,ca"]);
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for t in &lines[..2] {
        validate("gradcheck-target.schema.json", t);
        assert_eq!(t["passed"], true);
    }
    validate("gradcheck-summary.schema.json", &lines[2]);
    assert_eq!(lines[2]["targets"], 2);
}

#[test]
fn analyze_reports_match_their_schema() {
    let dir = tempfile::tempdir().unwrap();
    let random = dir.path().join("random");
    stdout(&["analyze-curves", "--seeds", "3", "--points", "96", "--l", "12", "--out", s(&random)]);
    let stats = read(&random.join("curve_stats.json"));
    validate("curve-stats.schema.json", &stats);
    validate("manifest.schema.json", &read(&random.join("manifest.json")));
    assert_eq!(stats["mode"], "random");
    assert_eq!(stats["runs"].as_array().unwrap().len(), 3);
    assert!(stats["channel_variance"]["block_output"].is_null());
    let csv = std::fs::read_to_string(random.join("channel_variance.csv")).unwrap();
    assert!(csv.starts_with("point_id,x,y,z,channel_mean,c0,"));
    assert_eq!(csv.lines().count(), 97);

    let ckpt = dir.path().join("ckpt");
    stdout(&[
        "analyze-curves",
        "--checkpoint",
        s(&trained().join("best.cwt")),
        "--seeds",
        "2",
        "--points",
        "64",
        "--policy",
        "naive",
        "--out",
        s(&ckpt),
    ]);
    let stats = read(&ckpt.join("curve_stats.json"));
    validate("curve-stats.schema.json", &stats);
    assert_eq!(stats["mode"], "checkpoint");
    assert_eq!(stats["policy"], "naive");
    assert!(stats["channel_variance"]["block_output"].is_number());
}

#[test]
fn bench_report_matches_its_schema() {
    let out = stdout(&["bench", "--config", "toy", "--points", "64", "--iters", "2", "--warmup", "0"]);
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    validate("bench.schema.json", &report);
    assert!(report["curves_on"]["num_params"].as_u64() > report["curves_off"]["num_params"].as_u64());
}

#[test]
fn identical_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let mut a = vec!["--threads", threads];
        a.extend_from_slice(SMALL_TRAIN);
        a.extend_from_slice(&["--epochs", "2", "--seed", "5", "--out", s(&out)]);
        stdout(&a);
        std::fs::read(out.join("metrics.jsonl")).unwrap()
    };
    assert_eq!(metrics("a", "1"), metrics("b", "3"));
}
