use gsqg_core::functionals::{energy, penalized_energy};
use gsqg_core::geometry::{impulse, make_varpi, mass};
use gsqg_core::solver::{
    multiplier_solve, solve_patch, solve_penalized, SolverConfig, SolverState,
};
use gsqg_core::{KernelParams, KernelTable};

fn setup(s: f64, n: usize, lambda: f64) -> (SolverConfig, KernelTable) {
    let config = SolverConfig::new(s, n, lambda, 96, 95);
    let grid = config.build_grid().unwrap();
    let table = KernelTable::build(&grid, KernelParams::new(s, n).unwrap()).unwrap();
    (config, table)
}

#[test]
fn penalized_stage_regression() {
    let (config, table) = setup(0.5, 2, 1e3);
    let grid = table.grid().clone();
    let p = 4.0;
    let init = SolverState::initial(&grid, 1e3).unwrap();
    let st = solve_penalized(&table, &config, p, init).unwrap();
    assert!(st.converged);
    assert!(st.residual_el <= 1e-6, "residual {}", st.residual_el);
    // constraints hold to tol_c, which moves the energy by up to mu dM + alpha dL
    let floor = 2.0 * config.tol_c * (st.alpha.abs() + st.mu.abs());
    let tail = &st.energy_history[st.energy_history.len().saturating_sub(10)..];
    for w in tail.windows(2) {
        assert!(w[1] >= w[0] - floor, "energy decreased: {w:?}");
    }
    let varpi = make_varpi(&grid, 1e3).unwrap();
    let reference = penalized_energy(&table, &varpi, 1e3, p).unwrap();
    let reached = penalized_energy(&table, &st.omega, 1e3, p).unwrap();
    assert!(reached >= reference - 1e-8, "{reached} < {reference}");
    assert!(st.mass_error.abs() <= 1e-9 && st.impulse_error.abs() <= 1e-9);
    assert!(st.omega.values().iter().all(|&v| (0.0..=1e3).contains(&v)));
}

#[test]
fn fixed_point_restart_takes_one_iteration() {
    let (config, table) = setup(0.5, 2, 1e3);
    let grid = table.grid().clone();
    let first = solve_penalized(&table, &config, 4.0, SolverState::initial(&grid, 1e3).unwrap()).unwrap();
    let again = solve_penalized(&table, &config, 4.0, first.clone()).unwrap();
    assert_eq!(again.iterations, 1);
    assert!(again.change_history[0] <= config.tol_omega);

    // feeding the converged state back reproduces its multipliers
    let k = table.apply(&first.omega).unwrap();
    let fit = multiplier_solve(&grid, &k, 1e3, 4.0, 1e-9, 1.0, (first.alpha, first.mu)).unwrap();
    assert!((fit.alpha - first.alpha).abs() <= 1e-6 * first.alpha.abs().max(1.0));
    assert!((fit.mu - first.mu).abs() <= 1e-6 * first.mu.abs().max(1.0));
}

#[test]
fn warm_started_stage_starts_near_previous_energy() {
    let (config, table) = setup(0.5, 2, 1e3);
    let grid = table.grid().clone();
    let mut one_step = config.clone();
    one_step.max_outer_iters = 1;
    let mut st = SolverState::initial(&grid, 1e3).unwrap();
    for (k, &p) in config.p_schedule.iter().enumerate() {
        if k > 0 {
            let before = energy(&table, &st.omega).unwrap();
            let first = solve_penalized(&table, &one_step, p, st.clone()).unwrap();
            let after = energy(&table, &first.omega).unwrap();
            assert!((after - before).abs() <= 0.01 * before, "p = {p}: {after} vs {before}");
        }
        st = solve_penalized(&table, &config, p, st).unwrap();
        assert!(st.mass_error.abs() <= config.tol_c && st.impulse_error.abs() <= config.tol_c);
    }
}

#[test]
fn patch_regression_three_folds() {
    let config = SolverConfig::new(0.5, 3, 1e3, 96, 95);
    let sol = solve_patch(&config).unwrap();
    let r = &sol.report;
    assert!(r.converged, "{:?}", r.failure);
    assert!(r.two_valued && r.fractional_nodes <= 2);
    let lambda = config.lambda;
    let off_levels = sol
        .omega
        .values()
        .iter()
        .filter(|&&v| v != 0.0 && v != lambda)
        .count();
    assert!(off_levels <= 2);
    assert!((mass(&sol.grid, &sol.omega).unwrap() - 1.0).abs() <= 1e-12);
    assert!((impulse(&sol.grid, &sol.omega).unwrap() - 1.0).abs() <= config.tol_c);
    assert_eq!(r.level_set_mismatch, 0);
    assert!(r.boundary_gap > 0.0);
    assert!(r.alpha > 0.0);
    for st in &r.stages {
        assert!(st.mass_error.abs() <= config.tol_c && st.impulse_error.abs() <= config.tol_c);
    }
}

#[test]
fn alpha_is_positive_across_exponents() {
    for &s in &[0.3, 0.5, 0.75] {
        for &lambda in &[1e2, 1e3] {
            let r = solve_patch(&SolverConfig::new(s, 2, lambda, 96, 95)).unwrap().report;
            assert!(r.converged, "s = {s}, lambda = {lambda}: {:?}", r.failure);
            assert!(r.alpha > 0.0, "s = {s}, lambda = {lambda}: alpha = {}", r.alpha);
        }
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let config = SolverConfig::new(0.75, 2, 500.0, 64, 63);
    let a = solve_patch(&config).unwrap();
    let b = solve_patch(&config).unwrap();
    assert_eq!(a.omega, b.omega);
    assert_eq!(a.psi, b.psi);
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
}
