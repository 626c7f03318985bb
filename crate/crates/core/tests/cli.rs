//! Black-box tests of the command-line binary: exit codes, file outputs,
//! and the stdout contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rcas")
}

fn config(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file)
}

fn run(args: &[&str], out_dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out_dir)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn search_prints_the_race_summary_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["search", "--config", config("counterexample.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("winner"), "no winner marker in:\n{text}");
    assert!(text.contains("200"), "winning value missing in:\n{text}");

    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["race"]["winner"]["value"], 200.0);
    assert_eq!(result["race"]["winner"]["mode"], "uniform_cost");
    for mode in ["uc", "apr", "amr"] {
        let trace = std::fs::read_to_string(dir.path().join(format!("trace_{mode}.csv"))).unwrap();
        assert!(trace.starts_with("step,action,position,type,"), "bad header for {mode}");
        assert!(trace.lines().count() > 1, "empty trace for {mode}");
    }
}

#[test]
fn single_mode_search_writes_one_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "search",
            "--config",
            config("counterexample.json").to_str().unwrap(),
            "--mode",
            "apr",
            "--engine",
            "eager",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["result"]["value"], 3.0);
    assert!(dir.path().join("trace_apr.csv").exists());
    assert!(!dir.path().join("trace_uc.csv").exists());
}

#[test]
fn missing_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["search", "--config", "/nonexistent/run.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["search", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inconsistent_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    // coverage objective missing cover entries for most of the ground set
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(config("coverage_small.json")).unwrap()).unwrap();
    cfg["objective"]["covers"] = serde_json::json!([
        {"position": 0, "type": 1, "items": [0]}
    ]);
    let bad = dir.path().join("partial.json");
    std::fs::write(&bad, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = run(&["search", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("result.json").exists());
}

#[test]
fn evaluator_failure_exits_with_code_two_and_leaves_no_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(config("counterexample.json")).unwrap()).unwrap();
    cfg["objective"] = serde_json::json!({
        "kind": "external",
        "cmd": [env!("CARGO_BIN_EXE_echo-evaluator"), "--error-on-eval"],
        "timeout_ms": 2000
    });
    let ext = dir.path().join("external.json");
    std::fs::write(&ext, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = run(&["search", "--config", ext.to_str().unwrap()], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!dir.path().join("result.json").exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "stray temp files: {leftovers:?}");
}

#[test]
fn cost_table_lists_per_layer_and_total_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["cost", "--config", config("coverage_small.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("position,type,layer,params,madds"));
    assert!(text.contains("0,1,total,656,167936"), "slim block row missing:\n{text}");
    assert!(text.contains("0,2,total,1312,335872"), "mid block row missing");
    assert!(text.contains("0,3,total,3936,1007616"), "wide block row missing");
    assert!(text.contains("0,3,expansion,"), "per-layer rows missing");
}

#[test]
fn cost_prices_an_explicit_assignment_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("assignment.json");
    std::fs::write(&file, r#"{"filled": [{"position": 0, "type": 1}]}"#).unwrap();
    let out = run(
        &[
            "cost",
            "--config",
            config("coverage_small.json").to_str().unwrap(),
            "--assignment",
            file.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["params"], 656);
    assert_eq!(report["madds"], 167936);
    assert_eq!(report["fits_budget"], true);
}

#[test]
fn brute_reports_the_exact_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["brute", "--config", config("counterexample.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("optimum value 200"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("brute.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["value"], 200.0);
    assert_eq!(report["result"]["enumerated"], 4);
    assert_eq!(report["result"]["feasible"], 3);
    assert_eq!(report["result"]["evaluations"], 3);
}

#[test]
fn diagnose_writes_the_audit_and_hull_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["diagnose", "--config", config("coverage_small.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("diagnose.json")).unwrap()).unwrap();
    assert_eq!(report["submodularity"]["mono_violations"], 0);
    assert_eq!(report["submodularity"]["dr_violations"], 0);
    assert_eq!(report["chain"]["monotone"], true);
    let hull = std::fs::read_to_string(dir.path().join("hull_gaps.csv")).unwrap();
    assert!(hull.starts_with("axis,position,type,cost,value,gap,on_hull"));
    assert!(hull.lines().count() > 1);
}

#[test]
fn bench_emits_a_csv_with_both_engines() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["bench", "--config", config("counterexample.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance,seed,positions,types,mode,eager_evaluations,lazy_evaluations,eager_wall_ms,lazy_wall_ms,phi"
    );
    // 20 instances x 3 modes
    assert_eq!(lines.count(), 60);
}

#[test]
fn seed_override_changes_the_bench_but_not_the_search() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    // the counterexample objective is explicit, so the seed must not matter
    for (dir, seed) in [(&dir_a, "1"), (&dir_b, "99")] {
        let out = run(
            &[
                "search",
                "--config",
                config("counterexample.json").to_str().unwrap(),
                "--seed",
                seed,
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let a = std::fs::read(dir_a.path().join("result.json")).unwrap();
    let b = std::fs::read(dir_b.path().join("result.json")).unwrap();
    assert_eq!(a, b);
}
