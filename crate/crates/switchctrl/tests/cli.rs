//! Black-box tests of the installed binary: exit codes, report shape,
//! determinism, and the CSV dump formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use switchctrl::fixtures::fixture_json;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_switchctrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn show_fixture_prints_the_exact_document() {
    let out = run(&["--show-fixture", "exp-3-4"]);
    assert_exit(&out, 0);
    let shown: Value = stdout_json(&out);
    let expected: Value = serde_json::from_str(fixture_json("exp-3-4").unwrap()).unwrap();
    assert_eq!(shown, expected);
}

#[test]
fn validate_reports_the_system_echo() {
    let out = run(&["validate", "--fixture", "exp-3-4"]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    assert_eq!(report["command"], "validate");
    assert_eq!(report["system"]["state_dim"], 2);
    assert_eq!(report["system"]["jump_cap"], 2);
    assert_eq!(report["system"]["initial_mode"], "0");
    assert!(report["system"]["config_sha256"].is_string());
    assert!(report["tool_version"].is_string());
    assert!(report["thresholds"]["rank_tol"].is_number());
}

#[test]
fn invariance_verdicts_respect_the_initial_mode() {
    let out = run(&["invariance", "--fixture", "exp-3-3"]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    let inv = &report["invariance"];
    assert_eq!(inv["approx_null_controllable"], true);
    assert_eq!(
        inv["ladder_dims"],
        serde_json::json!([[0, 1, 1], [0, 1, 1], [1, 1, 1]])
    );

    let out = run(&["invariance", "--fixture", "exp-3-3", "--gamma0", "e2"]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    assert_eq!(report["invariance"]["approx_null_controllable"], false);
    assert_eq!(report["invocation"]["overrides"]["gamma0"], "e2");
}

#[test]
fn metric_section_has_the_stable_fragment() {
    let out = run(&[
        "metric",
        "--fixture",
        "exp-3-4",
        "--eps-schedule",
        "1e-2,1e-3,1e-4,1e-5",
        "--grid-steps",
        "600",
    ]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    let metric = report["metric"].as_object().unwrap();
    for key in ["epsilons", "eigenvalues", "k0", "verdict"] {
        assert!(metric.contains_key(key), "metric section is missing {key}");
    }
    assert_eq!(metric["epsilons"].as_array().unwrap().len(), 4);
    let verdict = metric["verdict"].as_str().unwrap();
    assert!(
        ["exact", "not_exact", "inconclusive"].contains(&verdict),
        "unexpected verdict string {verdict}"
    );
}

#[test]
fn certify_output_is_deterministic_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let out = run(&[
            "certify",
            "--fixture",
            "exp-3-4",
            "--samples",
            "150",
            "--grid-steps",
            "500",
            "--eps-schedule",
            "1e-2,1e-3,1e-4,1e-5",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        let mut report: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let removed = report.as_object_mut().unwrap().remove("timing_ms");
        assert!(removed.is_some(), "report carries a timing_ms block");
        runs.push(serde_json::to_string(&report).unwrap());
    }
    assert_eq!(
        runs[0], runs[1],
        "same invocation must produce identical bytes"
    );
}

#[test]
fn certify_report_contains_every_section() {
    let out = run(&[
        "certify",
        "--fixture",
        "exp-3-4",
        "--samples",
        "120",
        "--grid-steps",
        "400",
        "--eps-schedule",
        "1e-2,1e-3,1e-4,1e-5",
    ]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    let sections = report.as_object().unwrap();
    for key in ["invariance", "riccati", "metric", "simulation"] {
        assert!(sections.contains_key(key), "missing section {key}");
    }
    let sim = &report["simulation"];
    assert!(sim["duality_residual"]["std_error"].as_f64().unwrap() > 0.0);
    let residual = sim["duality_residual"]["mean"].as_f64().unwrap();
    let se = sim["duality_residual"]["std_error"].as_f64().unwrap();
    assert!(
        residual.abs() <= 5.0 * se,
        "duality residual {residual} is implausibly large vs se {se}"
    );
}

#[test]
fn riccati_curve_dump_has_the_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let out = run(&[
        "riccati",
        "--fixture",
        "exp-3-4",
        "--grid-steps",
        "200",
        "--eps-schedule",
        "1e-3",
        "--dump-curves",
        csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,level,mode,i,j,K_ij"));
    // (M+1) levels × 2 modes × 201 grid points × 4 matrix entries.
    assert_eq!(lines.count(), 3 * 2 * 201 * 4);
    assert!(text.lines().nth(1).unwrap().contains(",0,"));
}

#[test]
fn path_dump_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("paths.csv");
    let out = run(&[
        "simulate",
        "--fixture",
        "exp-3-4",
        "--samples",
        "120",
        "--grid-steps",
        "200",
        "--dump-paths",
        csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sample,t,mode,x_1,x_2"));
    assert_eq!(lines.count(), 120 * 201);
}

#[test]
fn config_file_runs_like_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("system.json");
    fs::write(&path, fixture_json("exp-3-3").unwrap()).unwrap();
    let out = run(&["invariance", "--config", path.to_str().unwrap()]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    assert_eq!(report["invariance"]["approx_null_controllable"], true);
    assert!(report["invocation"]["source"]["config"]
        .as_str()
        .unwrap()
        .ends_with("system.json"));
}

#[test]
fn invalid_inputs_exit_with_code_1() {
    // Broken stochastic matrix: rows of Q must sum to one.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut doc: Value = serde_json::from_str(fixture_json("exp-3-4").unwrap()).unwrap();
    doc["Q"] = serde_json::json!([[0.0, 0.5], [1.0, 0.0]]);
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_exit(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Missing file, unknown fixture, malformed flag values, missing source.
    assert_exit(&run(&["validate", "--config", "/does/not/exist.json"]), 1);
    assert_exit(&run(&["validate", "--fixture", "no-such-fixture"]), 1);
    assert_exit(
        &run(&["riccati", "--fixture", "exp-3-4", "--eps-schedule", "abc"]),
        1,
    );
    assert_exit(
        &run(&["riccati", "--fixture", "exp-3-4", "--eps-schedule", "-1e-3"]),
        1,
    );
    assert_exit(&run(&["invariance"]), 1);
    assert_exit(
        &run(&["validate", "--fixture", "exp-3-4", "--no-such-flag"]),
        1,
    );
    assert_exit(
        &run(&["validate", "--fixture", "exp-3-4", "--gamma0", "zz"]),
        1,
    );
    // Metric needs at least three scheduled values to judge a trend.
    assert_exit(
        &run(&[
            "metric",
            "--fixture",
            "exp-3-4",
            "--eps-schedule",
            "1e-2,1e-3",
        ]),
        1,
    );
    // The Monte-Carlo battery refuses sample counts below its floor.
    assert_exit(
        &run(&["simulate", "--fixture", "exp-3-4", "--samples", "50"]),
        1,
    );
}

#[test]
fn numerical_failures_exit_with_code_2() {
    // ε = 1e−9 on a 100-step grid is far outside the stability region of
    // the stiff terminal layer; the positivity monitor must abort.
    let out = run(&[
        "riccati",
        "--fixture",
        "exp-3-4",
        "--eps-schedule",
        "1e-9",
        "--grid-steps",
        "100",
    ]);
    assert_exit(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("positive semidefiniteness"),
        "unexpected stderr: {stderr}"
    );
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_exit(&run(&["--help"]), 0);
    assert_exit(&run(&["--version"]), 0);
    for sub in [
        "validate",
        "invariance",
        "riccati",
        "metric",
        "simulate",
        "certify",
    ] {
        let out = run(&[sub, "--help"]);
        assert_exit(&out, 0);
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn output_flag_writes_the_report_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = run(&[
        "invariance",
        "--fixture",
        "exp-3-4",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert!(out.stdout.is_empty(), "report goes to the file, not stdout");
    assert!(Path::new(&path).exists());
    let report: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["command"], "invariance");
}
