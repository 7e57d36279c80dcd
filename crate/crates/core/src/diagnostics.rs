//! Asymptotic diagnostics: support localization, mass decay, the rotation
//! speed and its limit, and the trigonometric factorization behind the
//! monotonicity of the folded kernel.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{riesz_disk_constant, Region};
use crate::geometry::{patch_length_scale, ScalarField, SectorGrid};
use crate::kernel::{riesz_constant, KernelParams};
use crate::numeric::pairwise_sum;
use crate::solver::{solve_patch, SolverConfig, SolverReport};

/// Radii `Lambda` (in units of `eps`) at which the outside mass is recorded.
pub const DECAY_RADII: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];

/// Limit of the angular velocity as `lambda -> infinity`:
/// `sum_{n=1}^{N-1} c_s (1 - s) / (2 sin(n pi / N))^{2(1-s)}`.
pub fn alpha_limit(s: f64, n_folds: usize) -> Result<f64> {
    if n_folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_folds must be at least 2, got {n_folds}"
        )));
    }
    let c = riesz_constant(s)?;
    let terms: Vec<f64> = (1..n_folds)
        .map(|n| {
            let d = 2.0 * (n as f64 * PI / n_folds as f64).sin();
            c * (1.0 - s) / d.powf(2.0 * (1.0 - s))
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Decay exponent `gamma_s = (1 + 1/(2(1-s)))^{-1}` of the outside mass.
pub fn decay_rate(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "s must lie in (0,1), got {s}"
        )));
    }
    Ok(1.0 / (1.0 + 1.0 / (2.0 * (1.0 - s))))
}

/// Concentration statistics of a vorticity field around `(1, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportStats {
    /// Largest distance from `(1, 0)` of a node carrying vorticity.
    pub support_radius: f64,
    /// Distance between the vorticity barycenter and `(1, 0)`.
    pub barycenter_offset: f64,
    /// `int omega |x - (1,0)|^2 / M`.
    pub second_moment: f64,
    /// `(Lambda, M(omega, S \ B((1,0), Lambda eps)))` for [`DECAY_RADII`].
    pub mass_outside: Vec<(f64, f64)>,
    /// Number of 4-connected components of the support within the fold.
    pub components: usize,
}

impl SupportStats {
    pub fn mass_outside_at(&self, big_lambda: f64) -> Option<f64> {
        self.mass_outside
            .iter()
            .find(|(l, _)| *l == big_lambda)
            .map(|&(_, m)| m)
    }
}

/// Support radius, barycenter offset, second moment, outside masses and
/// component count of `omega`.
pub fn support_stats(grid: &SectorGrid, omega: &ScalarField, epsilon: f64) -> Result<SupportStats> {
    omega.check_grid(grid)?;
    let v = omega.values();
    let support: Vec<usize> = (0..grid.len()).filter(|&a| v[a] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let dist = |a: usize| {
        let (x, y) = grid.cartesian(a);
        ((x - 1.0).powi(2) + y * y).sqrt()
    };
    let support_radius = support.iter().map(|&a| dist(a)).fold(0.0, f64::max);
    let m = pairwise_sum(&support.iter().map(|&a| v[a] * grid.weight(a)).collect::<Vec<_>>());
    let moment = |f: &dyn Fn(usize) -> f64| {
        pairwise_sum(&support.iter().map(|&a| v[a] * grid.weight(a) * f(a)).collect::<Vec<_>>()) / m
    };
    let bx = moment(&|a| grid.cartesian(a).0);
    let by = moment(&|a| grid.cartesian(a).1);
    let barycenter_offset = ((bx - 1.0).powi(2) + by * by).sqrt();
    let second_moment = moment(&|a| dist(a).powi(2));
    let mass_outside = DECAY_RADII
        .iter()
        .map(|&l| {
            let inside = Region::ball(grid, (1.0, 0.0), l * epsilon);
            let terms: Vec<f64> = support
                .iter()
                .filter(|&&a| !inside.contains(a))
                .map(|&a| v[a] * grid.weight(a))
                .collect();
            (l, pairwise_sum(&terms))
        })
        .collect();
    Ok(SupportStats {
        support_radius,
        barycenter_offset,
        second_moment,
        mass_outside,
        components: count_components(grid, v),
    })
}

fn count_components(grid: &SectorGrid, v: &[f64]) -> usize {
    let (n_r, n_t) = (grid.n_r(), grid.n_theta());
    let mut seen = vec![false; v.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..v.len() {
        if v[start] <= 0.0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(a) = stack.pop() {
            let (i, j) = grid.split(a);
            let mut nbrs = Vec::with_capacity(4);
            if i > 0 {
                nbrs.push(grid.index(i - 1, j));
            }
            if i + 1 < n_r {
                nbrs.push(grid.index(i + 1, j));
            }
            if j > 0 {
                nbrs.push(grid.index(i, j - 1));
            }
            if j + 1 < n_t {
                nbrs.push(grid.index(i, j + 1));
            }
            for b in nbrs {
                if v[b] > 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
    }
    count
}

/// Angular velocity read off the weak form of the stationary equation with
/// the test function `|x|^2/2 + y.x`, `y = (0, 1)`:
/// `alpha T_1 = c_s (1 - s) T_2`.
pub fn weak_form_alpha(grid: &SectorGrid, omega: &ScalarField, params: &KernelParams) -> Result<f64> {
    omega.check_grid(grid)?;
    let n = params.n_folds();
    let s = params.s();
    let pts: Vec<(f64, f64, f64)> = (0..grid.len())
        .filter(|&a| omega.values()[a] > 0.0)
        .map(|a| {
            let (x, y) = grid.cartesian(a);
            (x, y, omega.values()[a] * grid.weight(a))
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptySupport);
    }
    let t1 = pairwise_sum(&pts.iter().map(|p| p.0 * p.2).collect::<Vec<_>>());
    let rotations: Vec<(f64, f64)> = (1..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let expo = 2.0 - s;
    let rows: Vec<f64> = pts
        .par_iter()
        .map(|p| {
            let mut acc = Vec::with_capacity(pts.len() * rotations.len());
            for &(c, sn) in &rotations {
                // y - R y for y = (0, 1)
                let (dy0, dy1) = (sn, 1.0 - c);
                for q in &pts {
                    let dx = p.0 - (c * q.0 - sn * q.1);
                    let dyv = p.1 - (sn * q.0 + c * q.1);
                    let d2 = dx * dx + dyv * dyv;
                    acc.push(q.2 * (-dyv * dy0 + dx * dy1) / d2.powf(expo));
                }
            }
            p.2 * pairwise_sum(&acc)
        })
        .collect();
    let t2 = pairwise_sum(&rows);
    Ok(params.c_s() * (1.0 - s) * t2 / t1)
}

/// `Phi(xi) = sum_n sin(xi_n) (1 - rho cos(xi_n))^{-(2-s)}` with `xi_n = xi - 2 pi n / N`.
pub fn phi_eval(xi: f64, n_folds: usize, s: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in (0,1), got {rho}"
        )));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParameter(format!(
            "s must lie in [0,1], got {s}"
        )));
    }
    if n_folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_folds must be at least 2, got {n_folds}"
        )));
    }
    Ok(phi_unchecked(xi, n_folds, s, rho))
}

fn phi_unchecked(xi: f64, n: usize, s: f64, rho: f64) -> f64 {
    (0..n)
        .map(|k| {
            let x = xi - 2.0 * PI * k as f64 / n as f64;
            x.sin() * (1.0 - rho * x.cos()).powf(-(2.0 - s))
        })
        .sum()
}

/// `F(xi) = Phi(xi) / sin(N xi)`, with the symmetric difference quotient
/// of `Phi` near the zeros of `sin(N xi)`.
pub fn f_hat(xi: f64, n_folds: usize, s: f64, rho: f64) -> f64 {
    let nf = n_folds as f64;
    let sn = (nf * xi).sin();
    if sn.abs() > 1e-6 {
        return phi_unchecked(xi, n_folds, s, rho) / sn;
    }
    let xi0 = (nf * xi / PI).round() * PI / nf;
    let h = 1e-5;
    let d = (phi_unchecked(xi0 + h, n_folds, s, rho) - phi_unchecked(xi0 - h, n_folds, s, rho))
        / (2.0 * h);
    d / (nf * (nf * xi0).cos())
}

/// Outcome of [`verify_combinatorics`].
#[derive(Clone, Debug, Serialize)]
pub struct CombinatoricsReport {
    pub n_folds: usize,
    pub s: f64,
    pub rho: f64,
    pub samples: usize,
    pub min_f: f64,
    pub max_abs_f: f64,
    pub max_period_defect: f64,
    /// First sample with a non-positive value, `(xi, F)`.
    pub counterexample: Option<(f64, f64)>,
    pub passed: bool,
}

/// Samples `F = Phi / sin(N xi)` on random points and on the zeros of
/// `sin(N xi)`, checking positivity and `2 pi / N`-periodicity.
pub fn verify_combinatorics(
    n_folds: usize,
    s: f64,
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CombinatoricsReport> {
    phi_eval(0.0, n_folds, s, rho)?;
    let period = 2.0 * PI / n_folds as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = (0..2 * n_folds).map(|k| k as f64 * PI / n_folds as f64).collect();
    xs.extend((0..n_samples).map(|_| rng.gen_range(-PI..PI)));
    let mut min_f = f64::INFINITY;
    let mut max_abs_f: f64 = 0.0;
    let mut max_defect: f64 = 0.0;
    let mut counterexample = None;
    for &xi in &xs {
        let f = f_hat(xi, n_folds, s, rho);
        let g = f_hat(xi + period, n_folds, s, rho);
        if !(f > 0.0) && counterexample.is_none() {
            counterexample = Some((xi, f));
        }
        min_f = min_f.min(f);
        max_abs_f = max_abs_f.max(f.abs());
        max_defect = max_defect.max((g - f).abs());
    }
    let passed = counterexample.is_none() && max_defect <= 1e-8 * max_abs_f;
    Ok(CombinatoricsReport {
        n_folds,
        s,
        rho,
        samples: xs.len(),
        min_f,
        max_abs_f,
        max_period_defect: max_defect,
        counterexample,
        passed,
    })
}

/// One row of a lambda sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub mu: f64,
    pub mu_over_lambda_pow: f64,
    pub energy: f64,
    pub localized_energy: f64,
    pub support_radius: f64,
    pub second_moment: f64,
    pub mass_outside: Vec<(f64, f64)>,
    pub barycenter_offset: f64,
    pub converged: bool,
    pub failure: Option<String>,
}

impl SweepRecord {
    fn from_report(r: &SolverReport) -> Self {
        Self {
            lambda: r.lambda,
            epsilon: r.epsilon,
            alpha: r.alpha,
            mu: r.mu,
            mu_over_lambda_pow: r.mu / r.lambda.powf(1.0 - r.s),
            energy: r.energy,
            localized_energy: r.localized_energy,
            support_radius: r.support.support_radius,
            second_moment: r.support.second_moment,
            mass_outside: r.support.mass_outside.clone(),
            barycenter_offset: r.support.barycenter_offset,
            converged: r.converged,
            failure: r.failure.clone(),
        }
    }

    fn failed(lambda: f64, err: &Error) -> Self {
        Self {
            lambda,
            epsilon: patch_length_scale(lambda),
            alpha: f64::NAN,
            mu: f64::NAN,
            mu_over_lambda_pow: f64::NAN,
            energy: f64::NAN,
            localized_energy: f64::NAN,
            support_radius: f64::NAN,
            second_moment: f64::NAN,
            mass_outside: Vec::new(),
            barycenter_offset: f64::NAN,
            converged: false,
            failure: Some(err.to_string()),
        }
    }

    pub fn mass_outside_at(&self, big_lambda: f64) -> Option<f64> {
        self.mass_outside
            .iter()
            .find(|(l, _)| *l == big_lambda)
            .map(|&(_, m)| m)
    }
}

/// Records of a lambda sweep together with the fitted asymptotic quantities.
#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub s: f64,
    pub n_folds: usize,
    pub records: Vec<SweepRecord>,
    /// Runs entering the regressions.
    pub converged_count: usize,
    /// Least-squares slope of `log support_radius` against `log lambda`.
    pub support_radius_slope: Option<f64>,
    /// `max / min` of `mu / lambda^{1-s}` over converged runs.
    pub mu_ratio_spread: Option<f64>,
    pub mu_all_positive: bool,
    pub alpha_limit_closed_form: f64,
    /// `|alpha - limit| / limit` at the largest converged lambda.
    pub alpha_relative_error: Option<f64>,
    /// Whether `s >= 1/2`, the range in which the limit is asserted.
    pub alpha_limit_applies: bool,
    pub sandwich: Option<SandwichCheck>,
}

/// Samples used for the disk constant in sweep summaries.
pub const SANDWICH_SAMPLES: usize = 1_000_000;

/// Comparison of `I_s(omega, S, S)` with the disk constant over a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SandwichCheck {
    pub disk_constant: f64,
    pub disk_stderr: f64,
    /// `(lambda, I_s - disk_constant)` for converged runs.
    pub excess: Vec<(f64, f64)>,
    /// `I_s >= disk_constant - 3 stderr` at every lambda.
    pub lower_holds: bool,
    /// `max(0, I_s - disk_constant - 3 stderr) / eps^{2(1-s)}` per lambda.
    pub c_values: Vec<f64>,
    /// Least-squares `C` of the upper excess against `eps^{2(1-s)}`.
    pub c_fit: f64,
    /// All `c_values` vanish, or their max/min ratio is at most 2.
    pub c_stable: bool,
}

/// Lower and upper localized-energy bounds with a fitted constant.
pub fn energy_sandwich(s: f64, records: &[SweepRecord], samples: usize) -> Result<SandwichCheck> {
    let (disk, se) = riesz_disk_constant(s, samples)?;
    let band = 3.0 * se;
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.converged).collect();
    let excess: Vec<(f64, f64)> = ok.iter().map(|r| (r.lambda, r.localized_energy - disk)).collect();
    let lower_holds = excess.iter().all(|&(_, e)| e >= -band);
    let scale = |r: &SweepRecord| r.epsilon.powf(2.0 * (1.0 - s));
    let upper: Vec<f64> = ok.iter().map(|r| (r.localized_energy - disk - band).max(0.0)).collect();
    let c_values: Vec<f64> = ok.iter().zip(&upper).map(|(r, u)| u / scale(r)).collect();
    let sxx: f64 = ok.iter().map(|r| scale(r).powi(2)).sum();
    let sxy: f64 = ok.iter().zip(&upper).map(|(r, u)| scale(r) * u).sum();
    let c_fit = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let hi = c_values.iter().cloned().fold(0.0, f64::max);
    let lo = c_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_stable = hi == 0.0 || (lo > 0.0 && hi / lo <= 2.0);
    Ok(SandwichCheck {
        disk_constant: disk,
        disk_stderr: se,
        excess,
        lower_holds,
        c_values,
        c_fit,
        c_stable,
    })
}

/// Solves every configuration (in parallel) and fits the asymptotics.
pub fn sweep_asymptotics(configs: &[SolverConfig]) -> Result<SweepSummary> {
    let first = configs
        .first()
        .ok_or_else(|| Error::InvalidParameter("the lambda list is empty".into()))?;
    let (s, n_folds) = (first.s, first.n_folds);
    if configs.iter().any(|c| c.s != s || c.n_folds != n_folds) {
        return Err(Error::InvalidParameter(
            "all sweep configurations must share s and n_folds".into(),
        ));
    }
    let mut records: Vec<SweepRecord> = configs
        .par_iter()
        .map(|c| match solve_patch(c) {
            Ok(sol) => SweepRecord::from_report(&sol.report),
            Err(e) => SweepRecord::failed(c.lambda, &e),
        })
        .collect();
    records.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    summarize(s, n_folds, records)
}

/// Asymptotic fits over already computed records.
pub fn summarize(s: f64, n_folds: usize, records: Vec<SweepRecord>) -> Result<SweepSummary> {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.converged).collect();
    let support_radius_slope = log_log_slope(
        &ok.iter()
            .map(|r| (r.lambda, r.support_radius))
            .collect::<Vec<_>>(),
    );
    let ratios: Vec<f64> = ok.iter().map(|r| r.mu_over_lambda_pow).collect();
    let mu_all_positive = ratios.iter().all(|&x| x > 0.0);
    let mu_ratio_spread = if ratios.is_empty() || !mu_all_positive {
        None
    } else {
        let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(hi / lo)
    };
    let limit = alpha_limit(s, n_folds)?;
    let alpha_relative_error = ok
        .iter()
        .max_by(|a, b| a.lambda.total_cmp(&b.lambda))
        .map(|r| (r.alpha - limit).abs() / limit);
    let sandwich = if ok.is_empty() {
        None
    } else {
        Some(energy_sandwich(s, &records, SANDWICH_SAMPLES)?)
    };
    Ok(SweepSummary {
        sandwich,
        s,
        n_folds,
        converged_count: ok.len(),
        records,
        support_radius_slope,
        mu_ratio_spread,
        mu_all_positive,
        alpha_limit_closed_form: limit,
        alpha_relative_error,
        alpha_limit_applies: s >= 0.5,
    })
}

/// Least-squares slope of `log y` against `log x`; `None` for fewer than two points.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}
