//! End-to-end runs of the installed binary: run directories, exit codes,
//! and the machine-readable final output line.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(path)
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pragmatune"))
}

fn final_json(output: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&output.stdout);
    let line = stdout.lines().last().unwrap_or_else(|| panic!("no stdout in {stdout:?}"));
    serde_json::from_str(line)
        .unwrap_or_else(|e| panic!("last stdout line is not JSON ({e}): {line}"))
}

#[test]
fn tune_writes_one_row_per_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = binary()
        .args(["tune", "--eval-spec"])
        .arg(fixture("synthetic/eval.json"))
        .args(["--max-evals", "200", "--learner", "GBRT", "--seed", "3"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201, "header plus one row per evaluation");

    let report = final_json(&output);
    let best = report["best_metric"].as_f64().unwrap();
    assert!(best.is_finite() && best < 8.0);
    let index = report["best_index"].as_u64().unwrap();
    assert!((1..=200).contains(&index));
    assert!(report["configuration"].is_object());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["settings"]["learner"], "GBRT");
    assert_eq!(manifest["settings"]["max_evals"], 200);
    assert!(manifest["end"].is_string(), "completion must be stamped");
}

#[test]
fn tune_defaults_are_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = binary()
        .args(["tune", "--eval-spec"])
        .arg(fixture("synthetic/eval.json"))
        .args(["--max-evals", "5"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["settings"]["learner"], "RF");
    assert_eq!(manifest["settings"]["kappa"], 1.96);
}

#[test]
fn unknown_evaluator_backend_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = binary()
        .args(["tune", "--eval-spec"])
        .arg(fixture("synthetic/eval.json"))
        .args(["--evaluator", "ray"])
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ray"), "stderr should name the backend: {stderr}");
}

#[test]
fn space_count_and_sampling_are_deterministic() {
    let output = binary()
        .arg("space")
        .arg(fixture("syr2k/space.json"))
        .arg("count")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report = final_json(&output);
    assert_eq!(report["product"], 10_648);
    assert_eq!(report["exact"], 7_986);

    let draw = || {
        let output = binary()
            .arg("space")
            .arg(fixture("syr2k/space.json"))
            .args(["sample", "5"])
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
        String::from_utf8(output.stdout).unwrap()
    };
    let first = draw();
    assert_eq!(first, draw(), "same file, same seed, same samples");
    assert_eq!(first.lines().count(), 5);
    for line in first.lines() {
        let cfg: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(cfg.is_object());
    }
}

#[test]
fn analyze_reports_the_stored_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let tune = binary()
        .args(["tune", "--eval-spec"])
        .arg(fixture("synthetic/eval.json"))
        .args(["--max-evals", "10", "--seed", "7"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(tune.status.code(), Some(0));

    let plot = dir.path().join("curve.tsv");
    let output = binary().arg("analyze").arg(&out).arg("--plot").arg(&plot).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report = final_json(&output);
    assert!((1..=10).contains(&report["best_index"].as_u64().unwrap()));
    assert!(report["best_metric"].as_f64().unwrap().is_finite());
    let curve = std::fs::read_to_string(&plot).unwrap();
    assert!(curve.starts_with("index\tmetric\tbest_so_far"));
    assert_eq!(curve.lines().count(), 11);
}

#[test]
fn analyze_exits_three_when_no_trial_succeeded() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("crash.sh"), "# #P0\nexit 9\n").unwrap();
    std::fs::write(
        dir.path().join("space.json"),
        r#"{"seed": 1, "parameters": [
            {"name": "P0", "kind": "categorical", "values": ["x"], "default": "x"}
        ]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("eval.json"),
        r#"{"template": "crash.sh", "space": "space.json", "run": "sh {source}",
            "metric": {"mode": "stdout_last_number"}, "timeout_seconds": 10}"#,
    )
    .unwrap();

    let out = dir.path().join("run");
    let tune = binary()
        .args(["tune", "--eval-spec"])
        .arg(dir.path().join("eval.json"))
        .args(["--max-evals", "3"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(tune.status.code(), Some(3), "no successful trial must exit 3");

    let analyze = binary().arg("analyze").arg(&out).output().unwrap();
    assert_eq!(analyze.status.code(), Some(3));
}

#[test]
fn mctree_survives_rejections_and_finds_the_planted_tiling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = binary()
        .args(["mctree", "autotune", "--loops"])
        .arg(fixture("floyd_warshall/loops.json"))
        .args(["--budget", "40", "--seed", "1", "--metric", "stdout-last-number"])
        .arg("--out")
        .arg(&out)
        .arg("sh")
        .arg(fixture("floyd_warshall/fakecc.sh"))
        .args(["floyd_warshall.c", "-o", "floyd_warshall.bin"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let report = final_json(&output);
    assert!(report["best_metric"].as_f64().unwrap() < 0.5, "planted optimum missed: {report}");
    let pragmas: Vec<String> = report["pragmas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_str().unwrap().to_string())
        .collect();
    assert!(
        pragmas.iter().any(|p| p.contains("loop(loop1,loop2) tile")),
        "best stack lacks the planted tiling: {pragmas:?}"
    );
    let total = report["total_experiments"].as_u64().unwrap();
    let valid = report["valid_experiments"].as_u64().unwrap();
    let rejected = report["rejected_experiments"].as_u64().unwrap();
    assert!(total >= valid);
    assert!(rejected >= 1, "the fake compiler rejects thread parallelization");
    assert_eq!(valid, 40, "budget counts valid experiments");

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("pragmas"));
    assert_eq!(csv.lines().count() as u64, 1 + total, "one row per experiment");
}
