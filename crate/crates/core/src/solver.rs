//! Continuation solver for the penalized maximization problems and their
//! patch limit.
//!
//! Every outer step maximizes the energy linearized at the current iterate
//! (the kernel potential `K_s omega` is frozen) together with the exact
//! penalty, under the mass and impulse constraints and the box
//! `0 <= omega <= lambda`. Since the energy is a positive quadratic form this
//! is a minorize-maximize scheme: the penalized energy cannot decrease from
//! one accepted iterate to the next. In the patch stage the penalty is gone,
//! the step is a linear program, and its solution is a bathtub fill with at
//! most two fractional nodes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{alpha_limit, support_stats, weak_form_alpha, SupportStats};
use crate::error::{Error, Result};
use crate::functionals::{energy_with_potential, localized_energy, penalty, Region};
use crate::geometry::{
    make_varpi, patch_length_scale, sector_half_angle, ScalarField, SectorGrid, R_HI, R_LO,
};
use crate::kernel::{KernelParams, KernelTable};
use crate::rearrange::{bathtub_ranking, fill_ranked, steiner_symmetrize};

/// Default half-width of the computational window, in units of `eps`.
pub const DEFAULT_WINDOW: f64 = 6.0;
/// Cells required across the patch diameter `2 eps` in each direction.
pub const MIN_CELLS_ACROSS: f64 = 8.0;

/// All tunables of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub s: f64,
    pub n_folds: usize,
    pub lambda: f64,
    pub n_r: usize,
    pub n_theta: usize,
    /// Half-width of the grid window around `(1, 0)` in units of `eps`;
    /// `None` discretizes the whole sector.
    pub window: Option<f64>,
    pub p_schedule: Vec<f64>,
    pub max_outer_iters: usize,
    pub tol_omega: f64,
    pub tol_c: f64,
    /// Step factor of the Newton multiplier solve, in `(0, 1]`.
    pub damping: f64,
    pub patch_stage: bool,
}

impl SolverConfig {
    pub fn new(s: f64, n_folds: usize, lambda: f64, n_r: usize, n_theta: usize) -> Self {
        Self {
            s,
            n_folds,
            lambda,
            n_r,
            n_theta,
            window: Some(DEFAULT_WINDOW),
            p_schedule: default_p_schedule(s),
            max_outer_iters: 500,
            tol_omega: 1e-8,
            tol_c: 1e-9,
            damping: 1.0,
            patch_stage: true,
        }
    }

    pub fn epsilon(&self) -> f64 {
        patch_length_scale(self.lambda)
    }

    /// Checks every field and the resolution of the patch scale.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.s > 0.0 && self.s < 1.0) {
            return bad(format!("s must lie in (0,1), got {}", self.s));
        }
        if self.n_folds < 2 {
            return bad(format!("N must be at least 2, got {}", self.n_folds));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive and finite, got {}", self.lambda));
        }
        if let Some(w) = self.window {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("window must be positive, got {w}"));
            }
        }
        for (k, &p) in self.p_schedule.iter().enumerate() {
            if !(p > 1.0 / self.s) || !p.is_finite() {
                return bad(format!(
                    "p_schedule entry {p} must exceed 1/s = {}",
                    1.0 / self.s
                ));
            }
            if k > 0 && p <= self.p_schedule[k - 1] {
                return bad("p_schedule must be strictly increasing".into());
            }
        }
        if self.p_schedule.is_empty() && !self.patch_stage {
            return bad("p_schedule is empty and the patch stage is disabled".into());
        }
        if !(self.tol_omega > 0.0) {
            return bad(format!("tolerances.omega must be positive, got {}", self.tol_omega));
        }
        if !(self.tol_c > 0.0) {
            return bad(format!(
                "tolerances.constraints must be positive, got {}",
                self.tol_c
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0,1], got {}", self.damping));
        }
        if self.max_outer_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        let grid = self.build_grid()?;
        let eps = self.epsilon();
        let radial = 2.0 * eps / grid.dr();
        let angular = 2.0 * eps / grid.dtheta();
        if radial < MIN_CELLS_ACROSS || angular < MIN_CELLS_ACROSS {
            return Err(Error::InvalidGrid(format!(
                "grid resolves the patch diameter 2*eps = {:.4e} with {radial:.1} radial and \
                 {angular:.1} angular cells; at least {MIN_CELLS_ACROSS} are required",
                2.0 * eps
            )));
        }
        make_varpi(&grid, self.lambda)?;
        Ok(())
    }

    /// Grid described by the configuration.
    pub fn build_grid(&self) -> Result<SectorGrid> {
        match self.window {
            None => SectorGrid::new(self.n_folds, self.n_r, self.n_theta),
            Some(w) => SectorGrid::centred_window(self.n_folds, self.n_r, self.n_theta, w * self.epsilon()),
        }
    }
}

/// `max(2, ceil(2/s))` followed by doublings up to 64.
pub fn default_p_schedule(s: f64) -> Vec<f64> {
    let mut p = (2.0f64).max((2.0 / s).ceil());
    if p <= 1.0 / s {
        p = (1.0 / s).floor() + 1.0;
    }
    let mut out = Vec::new();
    while p <= 64.0 {
        out.push(p);
        p *= 2.0;
    }
    out
}

/// Evolving iterate of one stage.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub omega: ScalarField,
    pub alpha: f64,
    pub mu: f64,
    /// Penalization exponent, `None` in the patch stage.
    pub p: Option<f64>,
    /// Penalized energy (plain energy in the patch stage) of each accepted iterate.
    pub energy_history: Vec<f64>,
    /// Relative L1 change of each outer step.
    pub change_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_el: f64,
    pub mass_error: f64,
    pub impulse_error: f64,
    /// Whether the cap `omega <= lambda` was active in the last update.
    pub clipping_active: bool,
}

impl SolverState {
    /// The reference disk with zero multipliers.
    pub fn initial(grid: &SectorGrid, lambda: f64) -> Result<Self> {
        let omega = make_varpi(grid, lambda)?;
        Ok(Self {
            omega,
            alpha: 0.0,
            mu: 0.0,
            p: None,
            energy_history: Vec::new(),
            change_history: Vec::new(),
            iterations: 0,
            converged: false,
            residual_el: f64::NAN,
            mass_error: f64::NAN,
            impulse_error: f64::NAN,
            clipping_active: false,
        })
    }
}

/// Summary of one continuation stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    /// Penalization exponent, `None` for the patch stage.
    pub p: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    pub residual_el: f64,
    pub energy: f64,
    pub mass_error: f64,
    pub impulse_error: f64,
    pub clipping_active: bool,
}

impl StageReport {
    fn from_state(st: &SolverState) -> Self {
        Self {
            p: st.p,
            iterations: st.iterations,
            converged: st.converged,
            final_change: st.change_history.last().copied().unwrap_or(f64::NAN),
            residual_el: st.residual_el,
            energy: st.energy_history.last().copied().unwrap_or(f64::NAN),
            mass_error: st.mass_error,
            impulse_error: st.impulse_error,
            clipping_active: st.clipping_active,
        }
    }
}

/// Outcome of [`solve_patch`].
#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub s: f64,
    pub n_folds: usize,
    pub lambda: f64,
    pub epsilon: f64,
    /// Angular velocity from the weak form of the stationary equation.
    pub alpha: f64,
    /// Lagrange multiplier of the impulse constraint in the final step.
    pub alpha_multiplier: f64,
    pub alpha_limit: f64,
    /// Level of `K_s omega + alpha |x|^2 / 2` that encloses unit mass.
    pub mu: f64,
    /// Lagrange multiplier of the mass constraint in the final step.
    pub mu_multiplier: f64,
    pub energy: f64,
    pub mass: f64,
    pub impulse: f64,
    pub residual_el: f64,
    /// `I_s(omega, S, S)`.
    pub localized_energy: f64,
    pub stages: Vec<StageReport>,
    pub support: SupportStats,
    /// Nodes with `0 < omega < lambda`.
    pub fractional_nodes: usize,
    pub two_valued: bool,
    /// Nodes where `{psi > 0}` and `supp omega` disagree outside the
    /// one-cell band around the support boundary.
    pub level_set_mismatch: usize,
    /// Distance from the support to the edge of the grid window.
    pub boundary_gap: f64,
    pub clipping_active: bool,
    pub converged: bool,
    pub failure: Option<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Converged fields together with the report.
#[derive(Clone, Debug)]
pub struct PatchSolution {
    pub grid: SectorGrid,
    pub omega: ScalarField,
    /// `K_s omega + (alpha/2) r^2 - mu` with the reported `alpha` and `mu`.
    pub psi: ScalarField,
    pub report: SolverReport,
}

/// `psi = K_s omega + (alpha/2) r^2 - mu`.
pub fn stream(table: &KernelTable, omega: &ScalarField, alpha: f64, mu: f64) -> Result<ScalarField> {
    let k = table.apply(omega)?;
    Ok(stream_from_potential(table.grid(), &k, alpha, mu))
}

/// `psi` when `K_s omega` is already known.
pub fn stream_from_potential(grid: &SectorGrid, k: &ScalarField, alpha: f64, mu: f64) -> ScalarField {
    let mut out = k.clone();
    for (a, v) in out.values_mut().iter_mut().enumerate() {
        let r = grid.radii()[a / grid.n_theta()];
        *v += 0.5 * alpha * r * r - mu;
    }
    out
}

/// Node-wise `lambda * max(psi, 0)^{1/(p-1)}`, clipped to `[0, lambda]`.
pub fn el_update(psi: &ScalarField, lambda: f64, p: f64) -> Result<ScalarField> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "penalization exponent must exceed 1, got {p}"
        )));
    }
    let mut out = psi.clone();
    let e = 1.0 / (p - 1.0);
    for v in out.values_mut() {
        *v = el_value(*v, lambda, e);
    }
    Ok(out)
}

#[inline]
fn el_value(psi: f64, lambda: f64, e: f64) -> f64 {
    if psi <= 0.0 {
        0.0
    } else if psi >= 1.0 {
        lambda
    } else {
        lambda * psi.powf(e)
    }
}

/// Multipliers and the field they produce from a frozen potential.
#[derive(Clone, Debug)]
pub struct ConstraintFit {
    pub alpha: f64,
    pub mu: f64,
    pub omega: ScalarField,
    pub mass_error: f64,
    pub impulse_error: f64,
}

/// Precomputed per-node data for the constraint solves.
struct Frozen<'a> {
    grid: &'a SectorGrid,
    k: &'a [f64],
    w: Vec<f64>,
    r2: Vec<f64>,
    lambda: f64,
}

impl<'a> Frozen<'a> {
    fn new(grid: &'a SectorGrid, k: &'a ScalarField, lambda: f64) -> Self {
        let n_t = grid.n_theta();
        Self {
            grid,
            k: k.values(),
            w: grid.weights(),
            r2: (0..grid.len()).map(|a| grid.radii()[a / n_t].powi(2)).collect(),
            lambda,
        }
    }

    fn moments(&self, v: &[f64]) -> (f64, f64) {
        let mut m = 0.0;
        let mut l = 0.0;
        for a in 0..v.len() {
            let q = self.w[a] * v[a];
            m += q;
            l += q * self.r2[a];
        }
        (m, l)
    }

    fn el(&self, alpha: f64, mu: f64, e: f64) -> Vec<f64> {
        (0..self.k.len())
            .map(|a| el_value(self.k[a] + 0.5 * alpha * self.r2[a] - mu, self.lambda, e))
            .collect()
    }

    fn score_range(&self, alpha: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in 0..self.k.len() {
            let b = self.k[a] + 0.5 * alpha * self.r2[a];
            lo = lo.min(b);
            hi = hi.max(b);
        }
        (lo, hi)
    }

    fn capacity(&self) -> f64 {
        self.lambda * self.w.iter().sum::<f64>()
    }
}

/// Sample `(x, f(x), state)` of a monotone function.
struct Sample<T> {
    x: f64,
    f: f64,
    state: T,
}

enum Root<T> {
    Hit(Sample<T>),
    /// No representable point between the two samples improves on them.
    Straddle(Sample<T>, Sample<T>),
}

/// Safeguarded regula falsi (Illinois variant) for a non-decreasing `f`
/// with `lo.f < 0 < hi.f`.
fn find_root<T>(
    f: &mut dyn FnMut(f64) -> Result<(f64, T)>,
    mut lo: Sample<T>,
    mut hi: Sample<T>,
    tol: f64,
) -> Result<Root<T>> {
    let mut side = 0i8;
    let (mut flo, mut fhi) = (lo.f, hi.f);
    for it in 0..400 {
        let mid = 0.5 * (lo.x + hi.x);
        if mid <= lo.x || mid >= hi.x {
            return Ok(Root::Straddle(lo, hi));
        }
        let mut x = (lo.x * fhi - hi.x * flo) / (fhi - flo);
        if it % 3 == 2 || !(x > lo.x && x < hi.x) {
            x = mid;
        }
        let (fx, state) = f(x)?;
        let s = Sample { x, f: fx, state };
        if fx.abs() <= tol {
            return Ok(Root::Hit(s));
        }
        if fx < 0.0 {
            lo = s;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(Root::Straddle(lo, hi))
}

fn blend(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// Mixing weight `t` with `(1-t) fa + t fb = 0`.
fn zero_weight(fa: f64, fb: f64) -> f64 {
    (fa / (fa - fb)).clamp(0.0, 1.0)
}

/// `mu` with `M = 1` at fixed `alpha`; across a jump of `M` that no
/// representable `mu` resolves, the two one-sided fields are mixed.
fn solve_mu(fz: &Frozen, alpha: f64, e: f64, tol: f64) -> Result<(f64, Vec<f64>)> {
    let (blo, bhi) = fz.score_range(alpha);
    let (mu_lo, mu_hi) = (blo - 1.0, bhi);
    if fz.capacity() < 1.0 {
        return Err(Error::InfeasibleMultipliers {
            alpha_lo: alpha,
            alpha_hi: alpha,
            mu_lo,
            mu_hi,
        });
    }
    let mut g = |mu: f64| -> Result<(f64, Vec<f64>)> {
        let v = fz.el(alpha, mu, e);
        let (m, _) = fz.moments(&v);
        Ok((1.0 - m, v))
    };
    let (f0, v0) = g(mu_lo)?;
    if f0.abs() <= tol {
        return Ok((mu_lo, v0));
    }
    let (f1, v1) = g(mu_hi)?;
    let lo = Sample { x: mu_lo, f: f0, state: v0 };
    let hi = Sample { x: mu_hi, f: f1, state: v1 };
    Ok(match find_root(&mut g, lo, hi, tol)? {
        Root::Hit(s) => (s.x, s.state),
        Root::Straddle(a, b) => {
            let t = zero_weight(a.f, b.f);
            ((1.0 - t) * a.x + t * b.x, blend(&a.state, &b.state, t))
        }
    })
}

/// Multipliers `(alpha, mu)` such that `el_update(K omega_prev + alpha r^2/2 - mu)`
/// has unit mass and impulse, for a frozen potential `k = K_s omega_prev`.
///
/// A damped Newton iteration with a finite-difference Jacobian is tried
/// first; if it stalls, the solve falls back to bisection on `alpha` around
/// an inner solve for `mu`.
pub fn multiplier_solve(
    grid: &SectorGrid,
    k: &ScalarField,
    lambda: f64,
    p: f64,
    tol_c: f64,
    damping: f64,
    guess: (f64, f64),
) -> Result<ConstraintFit> {
    k.check_grid(grid)?;
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "penalization exponent must exceed 1, got {p}"
        )));
    }
    let fz = Frozen::new(grid, k, lambda);
    let e = 1.0 / (p - 1.0);
    let inner_tol = 0.25 * tol_c;
    if let Some(fit) = newton(&fz, e, tol_c, damping, guess) {
        return Ok(fit);
    }
    // L is non-decreasing in alpha once M is pinned, so bracket and bisect
    let mut h = |alpha: f64| -> Result<(f64, (f64, Vec<f64>))> {
        let (mu, v) = solve_mu(&fz, alpha, e, inner_tol)?;
        let (_, l) = fz.moments(&v);
        Ok((l - 1.0, (mu, v)))
    };
    let (lo, hi) = bracket_alpha(&mut h, guess.0)?;
    let (alpha, mu, v) = match find_root(&mut h, lo, hi, inner_tol)? {
        Root::Hit(s) => (s.x, s.state.0, s.state.1),
        Root::Straddle(a, b) => {
            let t = zero_weight(a.f, b.f);
            (
                (1.0 - t) * a.x + t * b.x,
                (1.0 - t) * a.state.0 + t * b.state.0,
                blend(&a.state.1, &b.state.1, t),
            )
        }
    };
    finish(&fz, alpha, mu, v)
}

fn finish(fz: &Frozen, alpha: f64, mu: f64, v: Vec<f64>) -> Result<ConstraintFit> {
    let (m, l) = fz.moments(&v);
    Ok(ConstraintFit {
        alpha,
        mu,
        omega: ScalarField::from_values(fz.grid, v)?,
        mass_error: m - 1.0,
        impulse_error: l - 1.0,
    })
}

type AlphaSample<T> = Sample<T>;

fn bracket_alpha<T>(
    h: &mut dyn FnMut(f64) -> Result<(f64, T)>,
    start: f64,
) -> Result<(AlphaSample<T>, AlphaSample<T>)> {
    let mut step = 1.0f64.max(start.abs() * 1e-3);
    let (f0, s0) = h(start)?;
    let mut a = Sample { x: start, f: f0, state: s0 };
    let mut b;
    loop {
        let x = if a.f < 0.0 { a.x + step } else { a.x - step };
        let (fx, sx) = h(x)?;
        b = Sample { x, f: fx, state: sx };
        if (a.f < 0.0) != (b.f < 0.0) || b.f == 0.0 {
            break;
        }
        a = b;
        step *= 2.0;
        if step > 1e12 {
            return Err(Error::InfeasibleMultipliers {
                alpha_lo: start - step,
                alpha_hi: start + step,
                mu_lo: f64::NEG_INFINITY,
                mu_hi: f64::INFINITY,
            });
        }
    }
    Ok(if a.x < b.x { (a, b) } else { (b, a) })
}

fn newton(fz: &Frozen, e: f64, tol: f64, damping: f64, guess: (f64, f64)) -> Option<ConstraintFit> {
    let eval = |alpha: f64, mu: f64| {
        let v = fz.el(alpha, mu, e);
        let (m, l) = fz.moments(&v);
        (m - 1.0, l - 1.0, v)
    };
    let (mut alpha, mut mu) = guess;
    let (mut fm, mut fl, mut v) = eval(alpha, mu);
    for _ in 0..30 {
        if fm.abs() <= tol && fl.abs() <= tol {
            let omega = ScalarField::from_values(fz.grid, v).ok()?;
            return Some(ConstraintFit {
                alpha,
                mu,
                omega,
                mass_error: fm,
                impulse_error: fl,
            });
        }
        let ha = 1e-7 * alpha.abs().max(1.0);
        let hm = 1e-7 * mu.abs().max(1.0);
        let (am, al, _) = eval(alpha + ha, mu);
        let (bm, bl, _) = eval(alpha, mu + hm);
        let (j11, j21) = ((am - fm) / ha, (al - fl) / ha);
        let (j12, j22) = ((bm - fm) / hm, (bl - fl) / hm);
        let det = j11 * j22 - j12 * j21;
        if !(det.abs() > 0.0) || !det.is_finite() {
            return None;
        }
        let da = -(j22 * fm - j12 * fl) / det;
        let dm = -(-j21 * fm + j11 * fl) / det;
        let norm = fm.abs().max(fl.abs());
        let mut t = damping;
        let mut accepted = false;
        for _ in 0..12 {
            let (na, nm) = (alpha + t * da, mu + t * dm);
            let (gm, gl, gv) = eval(na, nm);
            if gm.abs().max(gl.abs()) < norm {
                alpha = na;
                mu = nm;
                fm = gm;
                fl = gl;
                v = gv;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

/// Relative L1 mismatch between `omega` and its Euler-Lagrange image.
fn el_residual(grid: &SectorGrid, omega: &ScalarField, image: &ScalarField) -> f64 {
    image.relative_l1_change(omega, grid)
}

/// One continuation stage at fixed `p`: repeats {multipliers with frozen
/// potential, Euler-Lagrange update, Steiner symmetrization} until the
/// relative L1 change drops to `tol_omega`.
pub fn solve_penalized(
    table: &KernelTable,
    config: &SolverConfig,
    p: f64,
    init: SolverState,
) -> Result<SolverState> {
    if !(p > 1.0 / config.s) {
        return Err(Error::InvalidParameter(format!(
            "penalization exponent p = {p} must exceed 1/s = {}",
            1.0 / config.s
        )));
    }
    let grid = table.grid();
    init.omega.check_grid(grid)?;
    let lambda = config.lambda;
    let mut st = init;
    st.p = Some(p);
    st.energy_history.clear();
    st.change_history.clear();
    st.converged = false;
    st.iterations = 0;
    let mut k = table.apply(&st.omega)?;
    for _ in 0..config.max_outer_iters {
        let fit = multiplier_solve(grid, &k, lambda, p, config.tol_c, config.damping, (st.alpha, st.mu))?;
        let next = steiner_symmetrize(&fit.omega)?;
        let change = next.relative_l1_change(&st.omega, grid);
        st.omega = next;
        st.alpha = fit.alpha;
        st.mu = fit.mu;
        st.mass_error = fit.mass_error;
        st.impulse_error = fit.impulse_error;
        st.iterations += 1;
        k = table.apply(&st.omega)?;
        st.energy_history
            .push(energy_with_potential(grid, &st.omega, &k) - penalty(grid, &st.omega, lambda, p));
        st.change_history.push(change);
        if change <= config.tol_omega {
            st.converged = true;
            break;
        }
    }
    let psi = stream_from_potential(grid, &k, st.alpha, st.mu);
    st.clipping_active = psi.values().iter().any(|&x| x > 1.0);
    let image = el_update(&psi, lambda, p)?;
    st.residual_el = el_residual(grid, &st.omega, &image);
    Ok(st)
}

/// Exact solution of the linearized patch problem: maximize
/// `sum w k omega` under unit mass and impulse with `0 <= omega <= lambda`.
pub fn patch_fit(grid: &SectorGrid, k: &ScalarField, lambda: f64, tol_c: f64, guess: f64) -> Result<ConstraintFit> {
    k.check_grid(grid)?;
    let fz = Frozen::new(grid, k, lambda);
    if fz.capacity() < 1.0 {
        return Err(Error::Infeasible(format!(
            "grid capacity {} is below the unit mass",
            fz.capacity()
        )));
    }
    let mut h = |alpha: f64| -> Result<(f64, Vec<f64>)> {
        let v = patch_fill(&fz, alpha)?;
        let (_, l) = fz.moments(&v);
        Ok((l - 1.0, v))
    };
    let (lo, hi) = bracket_alpha(&mut h, guess)?;
    let (alpha, v) = match find_root(&mut h, lo, hi, 0.25 * tol_c)? {
        Root::Hit(s) => (s.x, s.state),
        Root::Straddle(a, b) => {
            let t = zero_weight(a.f, b.f);
            ((1.0 - t) * a.x + t * b.x, blend(&a.state, &b.state, t))
        }
    };
    let scores: Vec<f64> = (0..v.len()).map(|a| fz.k[a] + 0.5 * alpha * fz.r2[a]).collect();
    let v = purify(&fz, v, &scores);
    let mu = threshold(&fz, &v, &scores);
    finish(&fz, alpha, mu, v)
}

fn patch_fill(fz: &Frozen, alpha: f64) -> Result<Vec<f64>> {
    let scores: Vec<f64> = (0..fz.k.len()).map(|a| fz.k[a] + 0.5 * alpha * fz.r2[a]).collect();
    let sf = ScalarField::from_values(fz.grid, scores)?;
    let ranking = bathtub_ranking(fz.grid, &sf);
    Ok(fill_ranked(fz.grid, &ranking, 1.0, fz.lambda, true)?.into_values())
}

/// Moves a feasible point of the linear program to a vertex without
/// lowering the objective, so at most two nodes stay fractional.
fn purify(fz: &Frozen, mut v: Vec<f64>, scores: &[f64]) -> Vec<f64> {
    let lambda = fz.lambda;
    loop {
        let frac: Vec<usize> = (0..v.len()).filter(|&a| v[a] > 0.0 && v[a] < lambda).collect();
        if frac.len() <= 2 {
            return v;
        }
        let idx = [frac[0], frac[1], frac[2]];
        let m = idx.map(|a| fz.w[a]);
        let l = idx.map(|a| fz.w[a] * fz.r2[a]);
        let mut d = [
            m[1] * l[2] - m[2] * l[1],
            m[2] * l[0] - m[0] * l[2],
            m[0] * l[1] - m[1] * l[0],
        ];
        let scale = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if scale <= 1e-14 * m[0] * l[0] {
            // two of the nodes share a ring: trade mass between them
            let (x, y) = if fz.r2[idx[0]] == fz.r2[idx[1]] {
                (0, 1)
            } else if fz.r2[idx[0]] == fz.r2[idx[2]] {
                (0, 2)
            } else {
                (1, 2)
            };
            d = [0.0; 3];
            d[x] = m[y];
            d[y] = -m[x];
        }
        let gain: f64 = (0..3).map(|q| scores[idx[q]] * fz.w[idx[q]] * d[q]).sum();
        if gain < 0.0 {
            d = d.map(|x| -x);
        }
        // largest step keeping all three nodes in [0, lambda]
        let mut t = f64::INFINITY;
        let mut hit = 0;
        for q in 0..3 {
            let a = idx[q];
            let room = if d[q] > 0.0 {
                (lambda - v[a]) / d[q]
            } else if d[q] < 0.0 {
                -v[a] / d[q]
            } else {
                f64::INFINITY
            };
            if room < t {
                t = room;
                hit = q;
            }
        }
        for q in 0..3 {
            v[idx[q]] += t * d[q];
        }
        let a = idx[hit];
        v[a] = if d[hit] > 0.0 { lambda } else { 0.0 };
        for q in 0..3 {
            v[idx[q]] = v[idx[q]].clamp(0.0, lambda);
        }
    }
}

/// Level of `scores` separating the support from the rest: the midpoint of
/// the lowest score inside and the highest score outside.
fn threshold(fz: &Frozen, v: &[f64], scores: &[f64]) -> f64 {
    let lambda = fz.lambda;
    let mut inside = f64::INFINITY;
    let mut outside = f64::NEG_INFINITY;
    for a in 0..v.len() {
        if v[a] >= lambda {
            inside = inside.min(scores[a]);
        } else if v[a] <= 0.0 {
            outside = outside.max(scores[a]);
        }
    }
    let frac: Vec<f64> = (0..v.len())
        .filter(|&a| v[a] > 0.0 && v[a] < lambda)
        .map(|a| scores[a])
        .collect();
    if !frac.is_empty() {
        return frac.iter().sum::<f64>() / frac.len() as f64;
    }
    match (inside.is_finite(), outside.is_finite()) {
        (true, true) => 0.5 * (inside + outside),
        (true, false) => inside,
        (false, true) => outside,
        (false, false) => 0.0,
    }
}

/// Patch stage: {frozen potential, linear-program step, Steiner
/// symmetrization} until the iterate stops moving.
pub fn solve_patch_stage(table: &KernelTable, config: &SolverConfig, init: SolverState) -> Result<SolverState> {
    let grid = table.grid();
    init.omega.check_grid(grid)?;
    let mut st = init;
    st.p = None;
    st.energy_history.clear();
    st.change_history.clear();
    st.converged = false;
    st.iterations = 0;
    let mut k = table.apply(&st.omega)?;
    for _ in 0..config.max_outer_iters {
        let fit = patch_fit(grid, &k, config.lambda, config.tol_c, st.alpha)?;
        let next = steiner_symmetrize(&fit.omega)?;
        let change = next.relative_l1_change(&st.omega, grid);
        st.omega = next;
        st.alpha = fit.alpha;
        st.mu = fit.mu;
        st.mass_error = fit.mass_error;
        st.impulse_error = fit.impulse_error;
        st.iterations += 1;
        k = table.apply(&st.omega)?;
        st.energy_history.push(energy_with_potential(grid, &st.omega, &k));
        st.change_history.push(change);
        if change <= config.tol_omega {
            st.converged = true;
            break;
        }
    }
    let psi = stream_from_potential(grid, &k, st.alpha, st.mu);
    st.residual_el = patch_residual(grid, &st.omega, &psi, config.lambda);
    st.clipping_active = false;
    Ok(st)
}

/// Relative L1 mismatch between `omega` and `lambda 1_{psi > 0}`, ignoring
/// the fractional nodes that sit on the level set.
fn patch_residual(grid: &SectorGrid, omega: &ScalarField, psi: &ScalarField, lambda: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..grid.len() {
        let v = omega.values()[a];
        let w = grid.weight(a);
        den += w * v;
        if v > 0.0 && v < lambda {
            continue;
        }
        let target = if psi.values()[a] > 0.0 { lambda } else { 0.0 };
        num += w * (v - target).abs();
    }
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Runs the continuation in `p` followed by the patch stage.
pub fn solve_patch(config: &SolverConfig) -> Result<PatchSolution> {
    let start = Instant::now();
    config.validate()?;
    let grid = config.build_grid()?;
    let params = KernelParams::new(config.s, config.n_folds)?;
    let table = KernelTable::build(&grid, params)?;
    let mut state = SolverState::initial(&grid, config.lambda)?;
    let mut stages = Vec::new();
    let mut failure = None;
    for &p in &config.p_schedule {
        state = solve_penalized(&table, config, p, state)?;
        let report = StageReport::from_state(&state);
        if !report.converged && failure.is_none() {
            failure = Some(format!("stage p = {p} did not converge"));
        }
        stages.push(report);
    }
    if config.patch_stage {
        state = solve_patch_stage(&table, config, state)?;
        let report = StageReport::from_state(&state);
        if !report.converged && failure.is_none() {
            failure = Some("patch stage did not converge".into());
        }
        stages.push(report);
    }
    finalize(&table, config, state, stages, failure, start)
}

fn finalize(
    table: &KernelTable,
    config: &SolverConfig,
    state: SolverState,
    stages: Vec<StageReport>,
    mut failure: Option<String>,
    start: Instant,
) -> Result<PatchSolution> {
    let grid = table.grid().clone();
    let params = *table.params();
    let lambda = config.lambda;
    let eps = config.epsilon();
    let omega = state.omega;
    let k = table.apply(&omega)?;
    let alpha = weak_form_alpha(&grid, &omega, &params)?;
    let fz = Frozen::new(&grid, &k, lambda);
    let scores: Vec<f64> = (0..grid.len()).map(|a| fz.k[a] + 0.5 * alpha * fz.r2[a]).collect();
    let mu = unit_mass_level(&grid, &scores, lambda)?;
    let psi = stream_from_potential(&grid, &k, alpha, mu);
    let (mass, impulse) = fz.moments(omega.values());
    let support = support_stats(&grid, &omega, eps)?;
    let fractional_nodes = omega
        .values()
        .iter()
        .filter(|&&v| v > 0.0 && v < lambda)
        .count();
    let two_valued = config.patch_stage && fractional_nodes <= 2;
    let level_set_mismatch = level_set_mismatch(&grid, &omega, &psi);
    let boundary_gap = boundary_gap(&grid, &omega);
    let all = Region::full(&grid);
    let localized = localized_energy(&grid, &omega, &all, &all, eps, config.s)?;
    let energy = energy_with_potential(&grid, &omega, &k);
    let converged = stages.last().map(|s| s.converged).unwrap_or(false);
    if converged && !(boundary_gap > 0.0) && failure.is_none() {
        failure = Some("support touches the edge of the grid".into());
    }
    let report = SolverReport {
        s: config.s,
        n_folds: config.n_folds,
        lambda,
        epsilon: eps,
        alpha,
        alpha_multiplier: state.alpha,
        alpha_limit: alpha_limit(config.s, config.n_folds)?,
        mu,
        mu_multiplier: state.mu,
        energy,
        mass,
        impulse,
        residual_el: state.residual_el,
        localized_energy: localized,
        stages,
        support,
        fractional_nodes,
        two_valued,
        level_set_mismatch,
        boundary_gap,
        clipping_active: state.clipping_active,
        converged: converged && boundary_gap > 0.0,
        failure,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(PatchSolution {
        grid,
        omega,
        psi,
        report,
    })
}

/// Score level at which the bathtub ranking accumulates unit mass.
fn unit_mass_level(grid: &SectorGrid, scores: &[f64], lambda: f64) -> Result<f64> {
    let sf = ScalarField::from_values(grid, scores.to_vec())?;
    let ranking = bathtub_ranking(grid, &sf);
    let mut used = 0.0;
    for (pos, &a) in ranking.iter().enumerate() {
        used += lambda * grid.weight(a);
        if used >= 1.0 {
            let next = ranking.get(pos + 1).map(|&b| scores[b]).unwrap_or(scores[a]);
            return Ok(0.5 * (scores[a] + next));
        }
    }
    Err(Error::Infeasible("grid capacity is below the unit mass".into()))
}

fn neighbours(grid: &SectorGrid, a: usize) -> Vec<usize> {
    let (i, j) = grid.split(a);
    let mut out = Vec::with_capacity(4);
    if i > 0 {
        out.push(grid.index(i - 1, j));
    }
    if i + 1 < grid.n_r() {
        out.push(grid.index(i + 1, j));
    }
    if j > 0 {
        out.push(grid.index(i, j - 1));
    }
    if j + 1 < grid.n_theta() {
        out.push(grid.index(i, j + 1));
    }
    out
}

/// Nodes where `psi > 0` and `omega > 0` disagree, excluding nodes that
/// touch the support boundary.
fn level_set_mismatch(grid: &SectorGrid, omega: &ScalarField, psi: &ScalarField) -> usize {
    let inside = |a: usize| omega.values()[a] > 0.0;
    (0..grid.len())
        .filter(|&a| (psi.values()[a] > 0.0) != inside(a))
        .filter(|&a| neighbours(grid, a).iter().all(|&b| inside(b) == inside(a)))
        .count()
}

/// Distance from the support to the edge of the grid (or of `S`).
fn boundary_gap(grid: &SectorGrid, omega: &ScalarField) -> f64 {
    let mut gap = f64::INFINITY;
    let half = grid.theta_half().min(sector_half_angle(grid.n_folds()));
    for a in 0..grid.len() {
        if omega.values()[a] <= 0.0 {
            continue;
        }
        let (r, t) = grid.polar(a);
        let lo = grid.r_min().max(R_LO);
        let hi = grid.r_max().min(R_HI);
        let edges = [
            r - 0.5 * grid.dr() - lo,
            hi - r - 0.5 * grid.dr(),
            r * (half - t.abs() - 0.5 * grid.dtheta()).sin(),
        ];
        for e in edges {
            gap = gap.min(e);
        }
    }
    gap
}
