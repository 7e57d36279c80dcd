//! Run configuration files.

use std::path::{Path, PathBuf};

use gsqg_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A single lambda or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl LambdaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaSpec::One(x) => vec![*x],
            LambdaSpec::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_r: usize,
    pub n_theta: usize,
    /// Half-width of the window around `(1, 0)` in units of eps, clipped to
    /// the sector; absent means the solver default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol_omega")]
    pub omega: f64,
    #[serde(default = "default_tol_constraints")]
    pub constraints: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            omega: default_tol_omega(),
            constraints: default_tol_constraints(),
        }
    }
}

fn default_tol_omega() -> f64 {
    1e-8
}

fn default_tol_constraints() -> f64 {
    1e-9
}

fn default_max_iters() -> usize {
    500
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("gsqg-out")
}

/// Contents of a `--config` JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub s: f64,
    #[serde(rename = "N")]
    pub n_folds: usize,
    pub lambda: LambdaSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Not part of the echo or the hash: results do not depend on it.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Solver configuration for one lambda, validated.
    pub fn solver_config(&self, lambda: f64) -> Result<SolverConfig, String> {
        let mut c = SolverConfig::new(self.s, self.n_folds, lambda, self.grid.n_r, self.grid.n_theta);
        if let Some(w) = self.grid.window {
            c.window = Some(w);
        }
        if let Some(p) = &self.p_schedule {
            c.p_schedule = p.clone();
        }
        c.tol_omega = self.tolerances.omega;
        c.tol_c = self.tolerances.constraints;
        c.max_outer_iters = self.max_iters;
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }

    /// SHA-256 of the canonical JSON echo.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
