//! Result files: summary.json, field.csv, sweep.csv and asymptotics.json.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gsqg_core::diagnostics::SweepSummary;
use gsqg_core::solver::PatchSolution;
use serde_json::{json, Value};

use crate::config::RunConfigFile;

/// Seventeen significant digits, enough to restore any `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn with_provenance(mut body: Value, config: &RunConfigFile, hash: &str) -> Value {
    let map = body.as_object_mut().expect("reports serialize to objects");
    map.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    map.insert("config_hash".into(), json!(hash));
    body
}

/// Report fields plus `support_radius` at the top level, the config echo and its hash.
pub fn summary_json(sol: &PatchSolution, config: &RunConfigFile, hash: &str) -> String {
    let mut body = serde_json::to_value(&sol.report).expect("report serializes");
    body.as_object_mut()
        .expect("report is an object")
        .insert("support_radius".into(), json!(sol.report.support.support_radius));
    let body = with_provenance(body, config, hash);
    serde_json::to_string_pretty(&body).expect("json") + "\n"
}

pub fn field_csv(sol: &PatchSolution, hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\nr,theta,omega,psi\n");
    for node in 0..sol.grid.len() {
        let (r, t) = sol.grid.polar(node);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(r),
            fmt_f64(t),
            fmt_f64(sol.omega.values()[node]),
            fmt_f64(sol.psi.values()[node])
        );
    }
    out
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "lambda",
    "epsilon",
    "alpha",
    "mu",
    "mu_over_lambda_pow",
    "energy",
    "support_radius",
    "mass_outside_4",
    "mass_outside_16",
    "barycenter_offset",
    "converged",
];

pub fn sweep_csv(summary: &SweepSummary, hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\n{}\n", SWEEP_COLUMNS.join(","));
    for r in &summary.records {
        let outside = |l: f64| r.mass_outside_at(l).map_or("nan".to_string(), fmt_f64);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.lambda),
            fmt_f64(r.epsilon),
            fmt_f64(r.alpha),
            fmt_f64(r.mu),
            fmt_f64(r.mu_over_lambda_pow),
            fmt_f64(r.energy),
            fmt_f64(r.support_radius),
            outside(4.0),
            outside(16.0),
            fmt_f64(r.barycenter_offset),
            r.converged
        );
    }
    out
}

pub fn asymptotics_json(summary: &SweepSummary, config: &RunConfigFile, hash: &str) -> String {
    let body = with_provenance(serde_json::to_value(summary).expect("summary serializes"), config, hash);
    serde_json::to_string_pretty(&body).expect("json") + "\n"
}

pub fn write_solution(dir: &Path, sol: &PatchSolution, config: &RunConfigFile, hash: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    write(&dir.join("summary.json"), &summary_json(sol, config, hash))?;
    write(&dir.join("field.csv"), &field_csv(sol, hash))
}

pub fn write_sweep(dir: &Path, summary: &SweepSummary, config: &RunConfigFile, hash: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    write(&dir.join("sweep.csv"), &sweep_csv(summary, hash))?;
    write(&dir.join("asymptotics.json"), &asymptotics_json(summary, config, hash))
}
