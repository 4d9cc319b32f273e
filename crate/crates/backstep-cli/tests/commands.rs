use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn backstep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backstep"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("BACKSTEP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn spectrum_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = backstep(dir.path(), &["spectrum-check", "--alpha", "2", "--n-max", "200"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gap_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_check"], 200);

    let out = backstep(dir.path(), &["spectrum-check", "--alpha", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha must exceed 1"));

    let bad = dir.path().join("model.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = backstep(dir.path(), &["spectrum-check", "--model", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn cauchy_verify_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = backstep(dir.path(), &["cauchy-verify", "--lambda", "1.375,8.5"]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("cauchy_verify.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 12);
    for row in rows {
        let defect: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(defect <= 1e-8);
    }

    let out = backstep(dir.path(), &["cauchy-verify", "--lambda", "0.5", "--n-grid", "1"]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("cauchy_verify.csv")).unwrap();
    let defect: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(defect, 0.0);

    let out = backstep(dir.path(), &["cauchy-verify", "--lambda", "3", "--n-grid", "4"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_2 - lambda_1"));
}

#[test]
fn synth_examples() {
    let dir = tempfile::tempdir().unwrap();
    let out = backstep(dir.path(), &["synth", "--lambda", "0.5", "--n", "2", "--matrices"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["k"][0][0].as_f64().unwrap() + 0.583333).abs() < 1e-6);
    assert!((v["k"][1][0].as_f64().unwrap() + 0.416667).abs() < 1e-6);
    assert!(dir.path().join("T.csv").exists() && dir.path().join("Tinv.csv").exists());

    let out = backstep(dir.path(), &["synth", "--kind", "skew", "--lambda", "1", "--n", "1"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["k"][0][0].as_f64().unwrap(), -1.0);

    let out = backstep(dir.path(), &["synth", "--lambda", "3.00000000001", "--n", "4"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn cost_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = backstep(dir.path(), &["cost-sweep", "--n-from", "1", "--n-to", "25", "--trunc", "60"]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("cost_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("N,lambda,dist,norm_T,norm_Tinv,k_sup,k_inf,F_inf,fit_exponent"));
    assert_eq!(lines.iter().filter(|l| l.ends_with(",ok")).count(), 25);
    assert!(lines.last().unwrap().starts_with("# fit"));

    let out = backstep(dir.path(), &["cost-sweep", "--n-from", "3", "--n-to", "2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn cost_sweep_flags_a_failing_point() {
    // A 12-entry table: larger damping values need eigenvalues beyond the
    // table to certify their distance, so those rows are flagged.
    let dir = tempfile::tempdir().unwrap();
    let eigen: Vec<String> = (1..=12)
        .map(|n| format!("[{}, 0.0]", -((n * n) as f64) - 1e-3 * n as f64))
        .collect();
    let model = format!(
        r#"{{"kind": "self_adjoint", "alpha": 2.0, "n_max": 12, "b": [{}], "eigenvalues": [{}]}}"#,
        ["1.0"; 12].join(", "),
        eigen.join(", ")
    );
    let path = dir.path().join("table.json");
    fs::write(&path, model).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!(r#"{{"model": {:?}, "n_from": 1, "n_to": 8, "trunc": 10}}"#, path)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_backstep"))
        .args(["--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .arg("cost-sweep")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("cost_sweep.csv")).unwrap();
    let ok = csv.lines().filter(|l| l.ends_with(",ok")).count();
    let flagged = csv.lines().filter(|l| l.contains(",error: ") || l.contains(",guard: ")).count();
    assert!(ok >= 1 && flagged >= 1, "{csv}");
    assert_eq!(ok + flagged, 8);
}

#[test]
fn simulate_and_null_control_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = backstep(dir.path(), &["simulate", "--lambda", "0.5", "--n", "8", "--t-end", "10"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["rate_hat"].as_f64().unwrap() <= -0.5);

    let out = backstep(dir.path(), &["null-control", "--stages", "0"]);
    assert_eq!(code(&out), 2);

    let y0 = dir.path().join("y0.json");
    fs::write(&y0, "[1, 2, 3]").unwrap();
    let out = backstep(dir.path(), &["null-control", "--y0", y0.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    // Exit 0 when the target is met, 3 when it is not; both write the outputs.
    let out = backstep(dir.path(), &["null-control", "--stages", "6"]);
    assert!(matches!(code(&out), 0 | 3));
    let csv = fs::read_to_string(dir.path().join("null_control.csv")).unwrap();
    assert!(csv.starts_with("t,norm_H,norm_s,u\n"));
    assert!(csv.lines().any(|l| l.starts_with("# final_ratio=")));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"].as_array().unwrap().len(), 6);
    for key in ["gamma", "sigma", "horizon"] {
        assert!(manifest.get(key).is_some());
    }
}

#[test]
fn config_values_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"lambda": 0.5, "n": 3}"#).unwrap();
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_backstep"))
            .args(["--config", cfg.to_str().unwrap(), "--out"])
            .arg(dir.path())
            .arg("synth")
            .args(extra)
            .output()
            .unwrap()
    };
    let v: serde_json::Value = serde_json::from_slice(&run(&[]).stdout).unwrap();
    assert_eq!(v["N"], 3);
    let v: serde_json::Value = serde_json::from_slice(&run(&["--n", "2"]).stdout).unwrap();
    assert_eq!(v["N"], 2);
}
