use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

fn ccf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccf")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// `a` and `b` follow the previous value of `u` and `v`; `u`, `v`, `w` are
/// noise.
fn write_panel(path: &Path, t: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut prev = [0.0; 3];
    let mut text = String::from("date,a,b,u,v,w\n");
    for s in 0..t {
        let e: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let a = 0.8 * prev[0] + 0.3 * e[0];
        let b = 0.5 * prev[0] - 0.6 * prev[1] + 0.3 * e[1];
        prev = [e[2], e[3], e[4]];
        writeln!(text, "t{s},{a:.6},{b:.6},{:.6},{:.6},{:.6}", e[2], e[3], e[4]).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

fn setup() -> (TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("panel.csv");
    write_panel(&data, 120);
    let s = data.to_str().unwrap().to_string();
    (dir, s)
}

fn sub(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

const SMALL: [&str; 8] = ["--cmax", "1", "--kmax", "1", "--grid", "3", "--max-components", "2"];

#[test]
fn missing_column_is_named() {
    let (dir, data) = setup();
    let out = ccf(&["cv", "--data", &data, "--y-columns", "a,nope", "--out", &sub(&dir, "o")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope"), "{}", stderr(&out));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn missing_data_flag_is_a_config_error() {
    let out = ccf(&["cv", "--y-columns", "a"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--data"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let (dir, data) = setup();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"cv": {"lambda_steps": 3}}"#).unwrap();
    let out = ccf(&["cv", "--config", cfg.to_str().unwrap(), "--data", &data, "--y-columns", "a"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda_steps"), "{}", stderr(&out));
}

#[test]
fn fit_then_forecast() {
    let (dir, data) = setup();
    let fit_dir = sub(&dir, "fit");
    let out = ccf(&[
        "fit", "--data", &data, "--y-columns", "a,b", "--z-columns", "u,v,w", "--components", "2", "--c", "0",
        "--k", "0", "--out", &fit_dir,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let model = dir.path().join("fit").join("model.json");
    let out = ccf(&["forecast", "--model", model.to_str().unwrap(), "--data", &data, "--out", &fit_dir]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("fit").join("forecast.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "series,standardized,original");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("a,") && lines[2].starts_with("b,"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
}

#[test]
fn forecast_schema_mismatches_exit_3() {
    let (dir, data) = setup();
    let fit_dir = sub(&dir, "fit");
    let out = ccf(&["fit", "--data", &data, "--y-columns", "a", "--out", &fit_dir]);
    assert!(out.status.success(), "{}", stderr(&out));
    let model = dir.path().join("fit").join("model.json");
    let model = model.to_str().unwrap();

    let out = ccf(&["forecast", "--model", model, "--data", &data, "--horizon", "2"]);
    assert_eq!(out.status.code(), Some(3));

    let other = dir.path().join("other.csv");
    let text = std::fs::read_to_string(&data).unwrap().replacen(",w\n", ",x\n", 1);
    std::fs::write(&other, text).unwrap();
    let out = ccf(&["forecast", "--model", model, "--data", other.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains('w'), "{}", stderr(&out));
}

#[test]
fn cv_writes_report_model_and_summary() {
    let (dir, data) = setup();
    let out_dir = sub(&dir, "cv");
    let out = ccf(&[&["cv", "--data", &data, "--y-columns", "a,b", "--out", &out_dir][..], &SMALL].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let base = dir.path().join("cv");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base.join("cv_report.json")).unwrap()).unwrap();
    assert_eq!(report["split"]["t1"], 84);
    assert!(report["fmsecv"].as_f64().unwrap() > 0.0);
    assert!(base.join("model.json").exists());
    let summary = std::fs::read_to_string(base.join("cv_summary.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), summary);
}

#[test]
fn bench_csv_has_a_line_per_method_and_the_ratio() {
    let (dir, data) = setup();
    let out_dir = sub(&dir, "bench");
    let out = ccf(&[&["bench", "--data", &data, "--y-columns", "a,b", "--out", &out_dir][..], &SMALL].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("bench").join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "method,fmsecv");
    let value = |i: usize| lines[i].split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!((value(3) - value(1) / value(2)).abs() < 1e-12);
}

#[test]
fn simulate_writes_table_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(&cfg, r#"{"simulate": {"m": 5, "q": 3, "t_total": 101, "burn_in": 20}}"#).unwrap();
    let out_dir = sub(&dir, "sim");
    let out = ccf(&[
        "simulate", "--config", cfg.to_str().unwrap(), "--reps", "2", "--sigma", "0.5,2", "--out", &out_dir,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("sim").join("sim_table.csv")).unwrap();
    assert!(table.starts_with("row,sigma_e=0.5,sigma_e=2\n"), "{table}");
    assert_eq!(table.lines().count(), 4);
    let records: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sim").join("sim_records.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(records["records"].as_array().unwrap().len(), 8);
}
