//! End-to-end CLI checks: exit codes, reproducibility, output shapes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpld"))
}

fn run_in(dir: &std::path::Path, args: &[&str]) -> std::process::Output {
    bin()
        .args(args)
        .env("FPLD_OUT_DIR", dir)
        .output()
        .expect("spawn fpld")
}

#[test]
fn selftest_exits_zero() {
    let out = bin().arg("selftest").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS priors"));
    assert!(text.contains("all checks passed"));
}

#[test]
fn malformed_model_json_exits_2_with_pointer() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "quantiles",
            "--model",
            r#"{"params":{"n":5}}"#,
            "--d-grid",
            "1:5:5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/kind"), "stderr: {err}");

    let out = run_in(
        tmp.path(),
        &[
            "quantiles",
            "--model",
            r#"{"kind":"sparse_rademacher_tensor","params":{"n":5,"k":9,"r":1}}"#,
            "--d-grid",
            "1:5:5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/params"), "stderr: {err}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["quantiles", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn budget_error_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "oracle-mmse",
            "--model",
            r#"{"kind":"sparse_rademacher_tensor","params":{"n":14,"k":3,"r":1}}"#,
            "--lambda",
            "1.0",
            "--degree",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn quantiles_byte_identical_across_runs() {
    let tmp1 = tempfile::tempdir().unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    let args = [
        "quantiles",
        "--model",
        r#"{"kind":"sparse_clustering","params":{"n":10,"p":30,"s":6,"delta":1.5}}"#,
        "--d-grid",
        "1:6:6",
        "--seed",
        "99",
    ];
    let o1 = run_in(tmp1.path(), &args);
    let o2 = run_in(tmp2.path(), &args);
    assert!(o1.status.success() && o2.status.success());
    let read_all = |d: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let f1 = read_all(tmp1.path());
    let f2 = read_all(tmp2.path());
    assert_eq!(f1.len(), 2); // manifest + csv
    assert_eq!(f1, f2, "outputs are not byte-identical");
}

#[test]
fn stochastic_commands_require_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "estimator-corr",
            "--model",
            r#"{"kind":"sparse_rademacher_tensor","params":{"n":4,"k":2,"r":1}}"#,
            "--lambda",
            "1.0",
            "--degree",
            "2",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn bessel_grid_residuals_small() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["bessel", "--nu", "1", "--x-grid", "0.1:100:64"]);
    assert!(out.status.success());
    let csv_path = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .expect("csv written");
    let text = std::fs::read_to_string(csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,ln_k_nu,recurrence_residual");
    let mut count = 0;
    for line in lines {
        let resid: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(resid < 1e-10, "residual {resid} in line {line}");
        count += 1;
    }
    assert_eq!(count, 64);
}

#[test]
fn fp_derivative_reports_sign() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "fp-derivative",
            "--model",
            r#"{"kind":"sparse_rademacher_tensor","params":{"n":50,"k":7,"r":1}}"#,
            "--lambda",
            "0.1",
            "--d-level",
            "3",
        ],
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["hard"].as_bool().unwrap());
    assert!(v["total"].as_f64().unwrap() > 0.0);
}

#[test]
fn equivalence_reports_crossings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "equivalence",
            "--n",
            "50",
            "--k",
            "7",
            "--degree",
            "2",
            "--lambda-grid",
            "0.2:20:8",
            "--mc-samples",
            "4000",
            "--seed",
            "5",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first_line = String::from_utf8_lossy(&out.stdout);
    let json_line = first_line.lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(json_line).unwrap();
    assert!(v["lambda_star"].as_f64().unwrap() > 0.0);
    assert!(v["lambda_dagger"].as_f64().unwrap() > 0.0);
}
