use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gsqg_core::solver::{solve_patch, SolverConfig};
use serde_json::Value;

const MINIMAL: &str = r#"{"s":0.5,"N":2,"lambda":1000,"grid":{"n_r":64,"n_theta":63}}"#;

fn gsqg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsqg"))
        .args(args)
        .current_dir(dir)
        .env_remove("GSQG_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_writes_summary_with_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", MINIMAL);
    let out = gsqg(&["solve", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    for key in ["alpha", "mu", "energy", "mass", "impulse", "residual_el", "support_radius"] {
        assert!(summary[key].is_number(), "missing {key}");
    }
    assert_eq!(summary["config"]["N"], 2);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    // per-stage residuals go to stderr
    assert!(stderr(&out).contains("residual_el"));
}

#[test]
fn out_of_range_s_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"s":1.5,"N":2,"lambda":1000,"grid":{"n_r":64,"n_theta":63}}"#,
    );
    let out = gsqg(&["solve", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("s must lie in (0,1)"), "{}", stderr(&out));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(
        dir.path(),
        "typo.json",
        r#"{"s":0.5,"N":2,"lambda":1000,"grid":{"n_r":64,"n_theta":63},"max_iter":5}"#,
    );
    let out = gsqg(&["solve", "--config", &typo], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("max_iter"), "{}", stderr(&out));

    let tol = write_config(
        dir.path(),
        "tol.json",
        r#"{"s":0.5,"N":2,"lambda":1000,"grid":{"n_r":64,"n_theta":63},"tolerances":{"omega":-1}}"#,
    );
    let out = gsqg(&["solve", "--config", &tol], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("tolerances.omega"), "{}", stderr(&out));

    let coarse = write_config(
        dir.path(),
        "coarse.json",
        r#"{"s":0.5,"N":2,"lambda":1000,"grid":{"n_r":8,"n_theta":7}}"#,
    );
    let out = gsqg(&["solve", "--config", &coarse], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("2*eps"), "{}", stderr(&out));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", MINIMAL);
    for run in ["a", "b"] {
        let out = gsqg(&["solve", "--config", &cfg, "--out", run], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["summary.json", "field.csv"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between reruns");
    }
}

#[test]
fn field_csv_round_trips_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", MINIMAL);
    let out = gsqg(&["solve", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("run/field.csv")).unwrap();
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    let mut lines = text.lines();
    let hash = summary["config_hash"].as_str().unwrap();
    assert_eq!(lines.next().unwrap(), format!("# config_hash={hash}"));
    assert_eq!(lines.next().unwrap(), "r,theta,omega,psi");

    let sol = solve_patch(&SolverConfig::new(0.5, 2, 1000.0, 64, 63)).unwrap();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), sol.grid.len());
    for (node, row) in rows.iter().enumerate() {
        let (r, t) = sol.grid.polar(node);
        assert_eq!(row[0].to_bits(), r.to_bits());
        assert_eq!(row[1].to_bits(), t.to_bits());
        assert_eq!(row[2].to_bits(), sol.omega.values()[node].to_bits());
        assert_eq!(row[3].to_bits(), sol.psi.values()[node].to_bits());
    }
}

#[test]
fn overrides_change_the_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", MINIMAL);
    let out = gsqg(
        &["solve", "--config", &cfg, "--lambda", "2000", "--s", "0.75", "--n-folds", "3", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["lambda"], 2000.0);
    assert_eq!(summary["s"], 0.75);
    assert_eq!(summary["n_folds"], 3);
    assert_eq!(summary["config"]["lambda"], 2000.0);
}

#[test]
fn non_convergence_exits_with_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"s":0.5,"N":2,"lambda":1000,"grid":{"n_r":64,"n_theta":63},"max_iters":1}"#,
    );
    let out = gsqg(&["solve", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("o/summary.json").exists());
    assert!(dir.path().join("o/field.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        r#"{"s":0.5,"N":3,"lambda":[100,1000],"grid":{"n_r":64,"n_theta":63}}"#,
    );
    let out = gsqg(&["sweep", "--config", &cfg, "--out", "sw"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "lambda,epsilon,alpha,mu,mu_over_lambda_pow,energy,support_radius,mass_outside_4,mass_outside_16,barycenter_offset,converged"
    );
    let asym: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sw/asymptotics.json")).unwrap()).unwrap();
    let limit = asym["alpha_limit_closed_form"].as_f64().unwrap();
    assert!((limit - 1.0 / (2.0 * std::f64::consts::PI * 3f64.sqrt())).abs() < 1e-12);
    assert!(asym["support_radius_slope"].is_number());
    assert!(asym["config_hash"].is_string());
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "empty.json",
        r#"{"s":0.5,"N":3,"lambda":[],"grid":{"n_r":64,"n_theta":63}}"#,
    );
    let out = gsqg(&["sweep", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lambda"));
}

#[test]
fn verify_reports_and_rejects_unknown_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsqg(&["verify", "rearrange", "--seed", "3", "--samples", "20"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("idempotence") && table.contains("PASS"));
    assert!(!table.contains("FAIL"));

    let out = gsqg(&["verify", "everything"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    for name in ["rearrange", "kernel", "energy-bounds", "combinatorics", "bathtub", "all"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn verify_all_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsqg(&["verify", "all"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    for suite in ["rearrange", "kernel", "energy-bounds", "combinatorics", "bathtub"] {
        assert!(table.lines().any(|l| l.starts_with(suite)), "{suite} missing");
    }
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", MINIMAL);
    let run = |threads: &str, out_dir: &str| {
        Command::new(env!("CARGO_BIN_EXE_gsqg"))
            .args(["solve", "--config", &cfg, "--out", out_dir])
            .current_dir(dir.path())
            .env("GSQG_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(run("0", "x").status.code(), Some(1));
    assert_eq!(run("many", "x").status.code(), Some(1));
    assert_eq!(run("1", "one").status.code(), Some(0));
    assert_eq!(run("3", "three").status.code(), Some(0));
    let a = fs::read(dir.path().join("one/summary.json")).unwrap();
    let b = fs::read(dir.path().join("three/summary.json")).unwrap();
    assert!(a == b, "output depends on the thread count");
}
