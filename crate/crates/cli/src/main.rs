//! `gsqg`: solve, sweep and verify co-rotating gSQG vortex patches.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gsqg_core::diagnostics::sweep_asymptotics;
use gsqg_core::solver::solve_patch;
use gsqg_core::verify::{run_suite, DEFAULT_SEED};

use config::{LambdaSpec, RunConfigFile};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "gsqg", version, about = "Co-rotating vortex patches of the gSQG equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case and write summary.json and field.csv
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long = "n-folds")]
        n_folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve every lambda of the config and write sweep.csv and asymptotics.json
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property suite: rearrange, kernel, energy-bounds, combinatorics, bathtub or all
    Verify {
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GSQG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GSQG_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot set up {n} worker threads: {e}"))
}

fn cmd_solve(
    path: PathBuf,
    lambda: Option<f64>,
    s: Option<f64>,
    n_folds: Option<usize>,
    out: Option<PathBuf>,
) -> Result<u8, String> {
    let mut cfg = RunConfigFile::load(&path)?;
    if let Some(l) = lambda {
        cfg.lambda = LambdaSpec::One(l);
    }
    if let Some(s) = s {
        cfg.s = s;
    }
    if let Some(n) = n_folds {
        cfg.n_folds = n;
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    let lambdas = cfg.lambda.values();
    let &[lambda] = lambdas.as_slice() else {
        return Err(format!(
            "lambda: solve takes a single value, got {} (use --lambda or the sweep command)",
            lambdas.len()
        ));
    };
    let solver = cfg.solver_config(lambda)?;
    let hash = cfg.hash();
    let sol = match solve_patch(&solver) {
        Ok(sol) => sol,
        Err(e) => {
            eprintln!("solver failed: {e}");
            return Ok(EXIT_NOT_CONVERGED);
        }
    };
    for st in &sol.report.stages {
        let label = st.p.map_or("patch".to_string(), |p| format!("p={p}"));
        eprintln!(
            "stage {label:>8}: iterations {:>4}  change {:.2e}  residual_el {:.2e}  |M-1| {:.1e}  |L-1| {:.1e}{}",
            st.iterations,
            st.final_change,
            st.residual_el,
            st.mass_error,
            st.impulse_error,
            if st.converged { "" } else { "  (not converged)" }
        );
    }
    output::write_solution(&cfg.output_dir, &sol, &cfg, &hash)?;
    let r = &sol.report;
    eprintln!(
        "alpha {:.6e} (limit {:.6e})  mu {:.6e}  energy {:.6e}  support_radius {:.3e}  -> {}",
        r.alpha,
        r.alpha_limit,
        r.mu,
        r.energy,
        r.support.support_radius,
        cfg.output_dir.display()
    );
    if let Some(f) = &r.failure {
        eprintln!("not converged: {f}");
    }
    Ok(if r.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_sweep(path: PathBuf, out: Option<PathBuf>) -> Result<u8, String> {
    let mut cfg = RunConfigFile::load(&path)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    let lambdas = cfg.lambda.values();
    if lambdas.is_empty() {
        return Err("lambda: the sweep list is empty".into());
    }
    let configs = lambdas
        .iter()
        .map(|&l| cfg.solver_config(l))
        .collect::<Result<Vec<_>, _>>()?;
    let hash = cfg.hash();
    let summary = sweep_asymptotics(&configs).map_err(|e| e.to_string())?;
    for r in &summary.records {
        eprintln!(
            "lambda {:>10.3e}  alpha {:.6e}  mu {:.6e}  support_radius {:.3e}  {}",
            r.lambda,
            r.alpha,
            r.mu,
            r.support_radius,
            match &r.failure {
                None if r.converged => "converged".to_string(),
                None => "not converged".to_string(),
                Some(f) => format!("failed: {f}"),
            }
        );
    }
    output::write_sweep(&cfg.output_dir, &summary, &cfg, &hash)?;
    let all = summary.converged_count == summary.records.len();
    Ok(if all { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_verify(suite: &str, seed: u64, samples: Option<usize>) -> Result<u8, String> {
    let checks = run_suite(suite, seed, samples).map_err(|e| e.to_string())?;
    let width = checks.iter().map(|c| c.property.len()).max().unwrap_or(0);
    for c in &checks {
        println!(
            "{:<14} {:<width$}  {}  {}",
            c.suite,
            c.property,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} properties, {failed} failed", checks.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Solve {
            config,
            lambda,
            s,
            n_folds,
            out,
        } => cmd_solve(config, lambda, s, n_folds, out),
        Command::Sweep { config, out } => cmd_sweep(config, out),
        Command::Verify {
            suite,
            seed,
            samples,
        } => cmd_verify(&suite, seed, samples),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
