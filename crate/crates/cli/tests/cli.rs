use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coda_core::data::{write_auxiliary_csv, write_primary_csv};
use coda_core::simulation::{generate, Design, ScenarioSpec};
use coda_core::AuxiliarySample;
use nalgebra::DMatrix;

fn coda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coda"))
        .args(args)
        .env_remove("CODA_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a Scenario 1 sample pair and returns the two paths.
fn scenario_files(dir: &Path, n_e: usize, n_u: usize, seed: u64) -> (PathBuf, PathBuf) {
    let spec = ScenarioSpec::new(1, Design::Homogeneous).unwrap();
    let (e, u) = generate(&spec, n_e, n_u, seed).unwrap();
    let p = dir.join("primary.csv");
    let a = dir.join("auxiliary.csv");
    write_primary_csv(std::fs::File::create(&p).unwrap(), &e).unwrap();
    write_auxiliary_csv(std::fs::File::create(&a).unwrap(), &u).unwrap();
    (p, a)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_csv_has_one_row_per_statistic_and_is_reproducible() {
    let args = [
        "simulate",
        "--scenario",
        "1",
        "--ne",
        "200",
        "--nu",
        "400",
        "--reps",
        "4",
        "--seed",
        "7",
        "--format",
        "csv",
    ];
    let a = coda(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let text = stdout(&a);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "statistic,CODA(d_opt),CODA(d_hat),ODR(d_opt),ODR(d_hat_E)");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "true_value",
            "estimated_value",
            "sd_estimate",
            "mean_sigma_hat",
            "coverage",
            "improved_efficiency_pct",
            "rho",
            "sigma_m"
        ]
    );
    let b = coda(&args);
    assert_eq!(text, stdout(&b));
}

#[test]
fn simulate_json_is_a_study_summary() {
    let o = coda(&[
        "simulate",
        "--scenario",
        "2",
        "--ne",
        "150",
        "--nu",
        "300",
        "--reps",
        "2",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["scenario"], 2);
    assert_eq!(v["mode"], "HO");
    assert_eq!(v["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn fit_emits_a_rule_that_true_value_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let (p, a) = scenario_files(dir.path(), 600, 1200, 3);
    let rule = dir.path().join("rule.json");
    let o = coda(&[
        "fit",
        "--primary",
        path(&p),
        "--auxiliary",
        path(&a),
        "--mode",
        "auto",
        "--rule-out",
        path(&rule),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["mode"], "HO");
    assert!(v["report"]["value"].is_number());
    assert!(v["report"]["variance"].as_f64().unwrap() <= v["report"]["sigma_y2"].as_f64().unwrap());

    let from_file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rule).unwrap()).unwrap();
    assert_eq!(from_file, v["rule"]);
    let t = coda(&[
        "true-value",
        "--scenario",
        "1",
        "--rule",
        path(&rule),
        "--n-mc",
        "20000",
        "--format",
        "table",
    ]);
    assert!(t.status.success(), "{}", stderr(&t));
    assert!(stdout(&t).contains("n_mc   20000"), "{}", stdout(&t));
}

#[test]
fn fit_rejects_mismatched_intermediate_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::new(1, Design::Homogeneous).unwrap();
    let (e, u) = generate(&spec, 200, 200, 4).unwrap();
    let m2 = DMatrix::from_fn(u.len(), 2, |i, j| u.m[(i, 0)] + j as f64);
    let u2 = AuxiliarySample::new(u.x.clone(), u.a.clone(), m2).unwrap();
    let p = dir.path().join("p.csv");
    let a = dir.path().join("a.csv");
    write_primary_csv(std::fs::File::create(&p).unwrap(), &e).unwrap();
    write_auxiliary_csv(std::fs::File::create(&a).unwrap(), &u2).unwrap();
    let o = coda(&["fit", "--primary", path(&p), "--auxiliary", path(&a)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("intermediate dimension mismatch"), "{}", stderr(&o));
}

#[test]
fn cio_check_passes_when_the_assumption_holds() {
    let dir = tempfile::tempdir().unwrap();
    let (p, a) = scenario_files(dir.path(), 5000, 5000, 5);
    let o = coda(&["cio-check", "--primary", path(&p), "--auxiliary", path(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for r in v["relative_mse"].as_array().unwrap() {
        assert!(r.as_f64().unwrap() < 0.05, "{v}");
    }
}

#[test]
fn malformed_csv_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = scenario_files(dir.path(), 100, 100, 6);
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "x1,x2,a,m1,y\n0.1,0.2,1,0.3,1.0\n0.1,oops,0,0.3,1.0\n").unwrap();
    let o = coda(&["fit", "--primary", path(&p), "--auxiliary", path(&a)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("row") && err.contains("x2"), "{err}");
}

#[test]
fn unknown_flag_prints_usage() {
    let o = coda(&["simulate", "--scenario", "1", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn scenario_flags_belong_to_scenario_commands() {
    let o = coda(&[
        "cio-check",
        "--primary",
        "p.csv",
        "--auxiliary",
        "a.csv",
        "--scenario",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"depth": 1, "alpha": 0.1}"#).unwrap();
    let o = coda(&[
        "--config",
        path(&cfg),
        "simulate",
        "--scenario",
        "1",
        "--ne",
        "150",
        "--nu",
        "300",
        "--reps",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"depth": 9}"#).unwrap();
    let o = coda(&["--config", path(&cfg), "simulate", "--scenario", "1", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let o = coda(&["--config", path(&cfg), "simulate", "--scenario", "1", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_scenario_is_a_validation_error() {
    let o = coda(&["true-value", "--scenario", "9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown scenario"));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_coda"))
        .args(["true-value", "--scenario", "2", "--n-mc", "1000"])
        .env("CODA_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
