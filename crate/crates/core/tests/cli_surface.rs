//! Integration tests for the command-line surface: exit codes, output
//! files, strict config parsing.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonlocal-pinn"))
}

#[test]
fn list_problems_is_stable_and_machine_readable() {
    let a = bin().args(["list-problems"]).output().unwrap();
    let b = bin().args(["list-problems"]).output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "ordering must be stable across runs");

    let j = bin().args(["list-problems", "--json"]).output().unwrap();
    assert!(j.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 10);
}

#[test]
fn unknown_problem_exits_one_and_lists_registry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"problem": "no_such_problem"}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("volterra_1d_bounded"), "should list known ids: {err}");
}

#[test]
fn config_typo_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.json");
    std::fs::write(
        &cfg,
        r#"{"problem": "fredholm_1d", "train": {"batchsize": 4}}"#,
    )
    .unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "diagnostic should carry a location: {err}");
}

#[test]
fn zero_iteration_run_produces_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"problem": "volterra_1d_bounded",
            "train": {"n_residual_points": 16},
            "estimator": {"n_samples": 4}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--iterations", "0", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.trim(), "iteration,loss_r,loss_b,w_r,w_b,rel_l2,wall_ms");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["schema_version"], 1);
    let rel = summary["final_rel_l2"].as_f64().unwrap();
    assert!(rel > 0.3, "untrained network should be far from exact: {rel}");
    assert!(out_dir.join("solution.csv").exists());
    assert!(out_dir.join("checkpoint_final.json").exists());
    // no stray temp files from the atomic writes
    for entry in std::fs::read_dir(&out_dir).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().ends_with(".tmp"), "{name:?}");
    }
}

#[test]
fn verify_estimators_small_budget_report_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["verify-estimators", "--samples", "2000", "--tol-sigma", "1.0", "--out"])
        .arg(&report_path)
        .output()
        .unwrap();
    // tiny budget with a tight threshold may legitimately fail checks,
    // but the report must be complete and the exit code meaningful
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 21);
    let all_pass = report["all_pass"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if all_pass { 0 } else { 3 }));
}

#[test]
fn sweep_rejects_empty_list_and_handles_degenerate_single_entry() {
    let out = bin()
        .args(["sweep", "volterra_1d_bounded", "--ns-list", ""])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = bin()
        .args([
            "sweep",
            "volterra_1d_bounded",
            "--ns-list",
            "3",
            "--seeds",
            "1",
            "--iterations",
            "5",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("ns,rel_l2_median"));
    assert!(lines.next().unwrap().starts_with("3,"));
}
