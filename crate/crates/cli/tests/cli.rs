use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CASH_LEVY: &str = r#"{"family": "compound-poisson", "kappa": 1, "rate": 1, "jump_scale": 0.5}"#;

fn run(dir: &Path, args: &[&str], config: &str) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_subdiff"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn small_cash(extra: &str) -> String {
    format!(
        r#"{{"model": "cash-management", "levy": {CASH_LEVY},
            "grid": {{"steps": 20}}, "monte_carlo": {{"paths": 200}},
            "solver": {{"batches": 4}} {extra}}}"#
    )
}

fn report(dir: &Path, name: &str) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap();
    v["report"].clone()
}

#[test]
fn empty_config_lists_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate-paths"], "");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model") && err.contains("levy"), "{err}");
}

#[test]
fn zero_kappa_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"model": "trivial", "levy": {"family": "pure-drift", "kappa": 0}}"#;
    let out = run(dir.path(), &["simulate-paths"], config);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("levy") && err.contains("kappa > 0"), "{err}");
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_cash(r#", "monte_carlo": {"pathz": 3}"#).replace(r#""monte_carlo": {"paths": 200},"#, "");
    let out = run(dir.path(), &["validate"], &config);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("monte_carlo") && err.contains("pathz"), "{err}");
}

#[test]
fn minimal_cash_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(r#"{{"model": "cash-management", "levy": {CASH_LEVY}}}"#);
    let out = run(dir.path(), &["validate"], &config);
    assert_eq!(out.status.code(), Some(0));
    let echo: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echo["grid"]["steps"], 100);
    assert_eq!(echo["monte_carlo"]["paths"], 10_000);
    assert_eq!(echo["control"]["kind"], "cash-optimal");
}

#[test]
fn pure_drift_clock_runs_at_half_speed() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"model": "trivial", "levy": {"family": "pure-drift", "kappa": 2},
        "grid": {"steps": 10}, "monte_carlo": {"paths": 1}}"#;
    let out = run(dir.path(), &["simulate-paths"], config);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256: "));
    assert_eq!(lines.next().unwrap(), "path_id,t,L,dL,R,dBL");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert!((r[2] - r[1] / 2.0).abs() < 1e-14, "L = {} at t = {}", r[2], r[1]);
        assert_eq!(r[4], 0.0);
    }
    assert_eq!(report(dir.path(), "paths_summary.json")["violations"], 0);
}

#[test]
fn cash_model_fails_only_the_diffusion_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["check-assumptions"], &small_cash(""));
    assert_eq!(out.status.code(), Some(0));
    let m = &report(dir.path(), "assumptions.json")["monotonicity"];
    assert_eq!(m["constant"], 0.2);
    assert_eq!(m["drift_pair"]["passes"], true);
    assert_eq!(m["diffusion"]["passes"], false);
    let w = &m["diffusion"]["witness"];
    let diff = |a: &str, b: &str| w[a].as_f64().unwrap() - w[b].as_f64().unwrap();
    assert_eq!((diff("x1", "x2"), diff("y1", "y2"), diff("z1", "z2")), (1.0, 0.0, 0.0));
}

#[test]
fn cash_demo_gaps_are_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["cash-demo"], &small_cash(""));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "optimality_report.json");
    let comparisons = r["optimality"]["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 3);
    for c in comparisons {
        assert!(c["gap"]["mean"].as_f64().unwrap() >= 0.0, "{c}");
    }
    assert!(r["first_order_residual"].as_f64().unwrap() < 1e-10);
    for name in [
        "adjoint.csv",
        "means_u_star.csv",
        "means_u_star_plus1.csv",
        "means_l.csv",
        "means_0.csv",
    ] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_sha256"].as_str().unwrap();
    let csv = fs::read_to_string(dir.path().join("out/adjoint.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_sha256: {hash}"));
    assert_eq!(manifest["seed"], 2024);
}

#[test]
fn non_cash_model_is_rejected_by_cash_demo() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_cash("").replace("cash-management", "coupled-linear");
    let out = run(dir.path(), &["cash-demo"], &config);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_candidate_fails_the_maximum_principle() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_cash(r#", "control": {"kind": "optimal-offset", "offset": 0.5}"#);
    let out = run(dir.path(), &["check-smp"], &config);
    assert_eq!(out.status.code(), Some(4));
    let r = report(dir.path(), "smp_report.json");
    assert_eq!(r["smp"]["passes"], false);
    assert!(r["exact_margin_error"].is_null());

    let out = run(dir.path(), &["check-smp"], &small_cash(""));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(
        report(dir.path(), "smp_report.json")["exact_margin_error"]
            .as_f64()
            .unwrap()
            < 1e-10
    );
}

#[test]
fn unconverged_picard_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_cash("").replace(r#""batches": 4"#, r#""batches": 4, "picard_max": 1, "tol": 1e-14"#);
    let out = run(dir.path(), &["solve-fbsde"], &config);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "error");
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, small_cash("")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_subdiff"))
        .args(["validate", "--seed", "99", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    let echo: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echo["monte_carlo"]["seed"], 99);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, small_cash("")).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_subdiff"))
            .args(["solve-adjoint", "--threads", threads, "--config"])
            .arg(&path)
            .arg("--out")
            .arg(&out_dir)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(out_dir);
    }
    for name in ["config.json", "adjoint.csv", "adjoint_summary.json"] {
        let a = fs::read(outputs[0].join(name)).unwrap();
        let b = fs::read(outputs[1].join(name)).unwrap();
        assert!(a == b, "{name} differs between thread counts");
    }
}
