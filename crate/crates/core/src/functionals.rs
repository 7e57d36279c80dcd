//! Scalar functionals: energy, penalized energy, localized energies and masses,
//! and the disk self-interaction constant.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ScalarField, SectorGrid};
use crate::kernel::KernelTable;
use crate::numeric::{dot3, pairwise_sum};

/// Default seed of the Monte Carlo estimate of the disk constant.
pub const DISK_CONSTANT_SEED: u64 = 0x5eed_d15c;

/// Energy of the N-fold field, `(N/2) sum_a w_a omega_a (K_s omega)_a`.
pub fn energy(table: &KernelTable, omega: &ScalarField) -> Result<f64> {
    let k = table.apply(omega)?;
    Ok(energy_with_potential(table.grid(), omega, &k))
}

/// Energy when `K_s omega` has already been computed.
pub fn energy_with_potential(grid: &SectorGrid, omega: &ScalarField, k: &ScalarField) -> f64 {
    let w = grid.weights();
    0.5 * grid.n_folds() as f64 * dot3(&w, omega.values(), k.values())
}

/// Penalty term `(lambda N / p) sum w (omega / lambda)^p`.
pub fn penalty(grid: &SectorGrid, omega: &ScalarField, lambda: f64, p: f64) -> f64 {
    let terms: Vec<f64> = omega
        .values()
        .iter()
        .enumerate()
        .map(|(a, &v)| grid.weight(a) * (v / lambda).powf(p))
        .collect();
    lambda * grid.n_folds() as f64 / p * pairwise_sum(&terms)
}

/// `E_{lambda,p}(omega) = E_s(omega) - (lambda N / p) int (omega / lambda)^p`.
pub fn penalized_energy(
    table: &KernelTable,
    omega: &ScalarField,
    lambda: f64,
    p: f64,
) -> Result<f64> {
    let s = table.params().s();
    if !(p > 1.0 / s) {
        return Err(Error::InvalidParameter(format!(
            "penalization exponent p = {p} must exceed 1/s = {}",
            1.0 / s
        )));
    }
    Ok(energy(table, omega)? - penalty(table.grid(), omega, lambda, p))
}

/// Node subset of a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    mask: Vec<bool>,
}

impl Region {
    pub fn from_mask(grid: &SectorGrid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: mask.len(),
            });
        }
        Ok(Self { mask })
    }

    pub fn full(grid: &SectorGrid) -> Self {
        Self {
            mask: vec![true; grid.len()],
        }
    }

    pub fn empty(grid: &SectorGrid) -> Self {
        Self {
            mask: vec![false; grid.len()],
        }
    }

    /// Nodes whose centres lie in the open Cartesian ball `B(centre, radius)`.
    pub fn ball(grid: &SectorGrid, centre: (f64, f64), radius: f64) -> Self {
        let mask = (0..grid.len())
            .map(|a| {
                let (x, y) = grid.cartesian(a);
                (x - centre.0).powi(2) + (y - centre.1).powi(2) < radius * radius
            })
            .collect();
        Self { mask }
    }

    /// Nodes with `a <= r <= b`.
    pub fn band(grid: &SectorGrid, a: f64, b: f64) -> Self {
        let mask = (0..grid.len())
            .map(|n| {
                let (r, _) = grid.polar(n);
                a <= r && r <= b
            })
            .collect();
        Self { mask }
    }

    pub fn complement(&self) -> Self {
        Self {
            mask: self.mask.iter().map(|m| !m).collect(),
        }
    }

    pub fn union(&self, other: &Region) -> Self {
        Self {
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersection(&self, other: &Region) -> Self {
        Self {
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn contains(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    fn check_grid(&self, grid: &SectorGrid) -> Result<()> {
        if self.mask.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: self.mask.len(),
            });
        }
        Ok(())
    }
}

/// `M(omega, X) = sum_{X} omega w`.
pub fn localized_mass(grid: &SectorGrid, omega: &ScalarField, region: &Region) -> Result<f64> {
    omega.check_grid(grid)?;
    region.check_grid(grid)?;
    let terms: Vec<f64> = omega
        .values()
        .iter()
        .enumerate()
        .map(|(a, &v)| if region.mask[a] { v * grid.weight(a) } else { 0.0 })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Localized energy
/// `I_s(omega, X, X') = sum_{a in X} sum_{b in X'} (eps / |x_a - x_b|)^(2(1-s)) omega_a omega_b w_a w_b`
/// with the single-fold Euclidean distance. The diagonal uses the equal-area
/// disk integral `eps^(2(1-s)) pi h^(2s) / s` per unit source density.
pub fn localized_energy(
    grid: &SectorGrid,
    omega: &ScalarField,
    x: &Region,
    x_prime: &Region,
    epsilon: f64,
    s: f64,
) -> Result<f64> {
    omega.check_grid(grid)?;
    x.check_grid(grid)?;
    x_prime.check_grid(grid)?;
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "s must lie in (0,1), got {s}"
        )));
    }
    let n_r = grid.n_r();
    let n_t = grid.n_theta();
    let radii = grid.radii();
    let dtheta = grid.dtheta();
    let power = 1.0 - s;
    let scale = epsilon.powf(2.0 * power);
    let vals = omega.values();

    // source density restricted to X'
    let src: Vec<f64> = vals
        .iter()
        .enumerate()
        .map(|(b, &v)| if x_prime.mask[b] { v * grid.weight(b) } else { 0.0 })
        .collect();
    let active_src: Vec<usize> = (0..n_r)
        .filter(|&ip| src[ip * n_t..(ip + 1) * n_t].iter().any(|&v| v != 0.0))
        .collect();

    let ring_sums: Vec<f64> = (0..n_r)
        .into_par_iter()
        .map(|i| {
            let r = radii[i];
            let w_i = grid.ring_weight(i);
            let targets: Vec<usize> = (0..n_t)
                .filter(|&j| x.mask[i * n_t + j] && vals[i * n_t + j] != 0.0)
                .collect();
            if targets.is_empty() {
                return 0.0;
            }
            let mut terms = Vec::with_capacity(active_src.len());
            let mut profile = vec![0.0; n_t];
            for &ip in &active_src {
                let rp = radii[ip];
                for (d, e) in profile.iter_mut().enumerate() {
                    *e = if ip == i && d == 0 {
                        // per unit source density: divide the disk integral by the cell weight
                        let h2 = w_i / PI;
                        PI * h2.powf(s) / s / w_i
                    } else {
                        let d2 = r * r + rp * rp - 2.0 * r * rp * (d as f64 * dtheta).cos();
                        d2.powf(-power)
                    };
                }
                let ring_src = &src[ip * n_t..(ip + 1) * n_t];
                let mut acc = 0.0;
                for &j in &targets {
                    let mut inner = 0.0;
                    for (jp, &v) in ring_src.iter().enumerate() {
                        inner += profile[j.abs_diff(jp)] * v;
                    }
                    acc += vals[i * n_t + j] * inner;
                }
                terms.push(acc * w_i);
            }
            pairwise_sum(&terms)
        })
        .collect();
    Ok(scale * pairwise_sum(&ring_sums))
}

/// Area of the intersection of two unit disks whose centres are `d` apart.
pub fn unit_disk_overlap(d: f64) -> f64 {
    if d >= 2.0 {
        return 0.0;
    }
    let h = 0.5 * d;
    2.0 * h.acos() - h * (4.0 - d * d).sqrt()
}

/// Monte Carlo estimate of
/// `I_s = (1/pi^2) int_{B(0,1)} int_{B(0,1)} |x - x'|^(-2(1-s)) dx dx'`
/// with its standard error.
pub fn riesz_disk_constant(s: f64, n_samples: usize) -> Result<(f64, f64)> {
    riesz_disk_constant_seeded(s, n_samples, DISK_CONSTANT_SEED)
}

/// [`riesz_disk_constant`] with an explicit seed.
///
/// The separation `z = x - x'` is importance-sampled with radial density
/// proportional to `|z|^(2s-1)` on `[0, 2]`; the remaining integrand is the
/// bounded overlap area of the two disks.
pub fn riesz_disk_constant_seeded(s: f64, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "s must lie in (0,1), got {s}"
        )));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParameter(
            "at least two samples are needed for a standard error".into(),
        ));
    }
    // I_s = (2/pi) int_0^2 d^(2s-1) A(d) dd = (2/pi) (2^(2s) / (2s)) E[A(D)]
    let prefactor = 2.0 / PI * 2f64.powf(2.0 * s) / (2.0 * s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv = 1.0 / (2.0 * s);
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..n_samples {
        let u: f64 = rng.gen();
        let d = 2.0 * u.powf(inv);
        let v = prefactor * unit_disk_overlap(d);
        // Welford update
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n_samples - 1) as f64;
    Ok((mean, (var / n_samples as f64).sqrt()))
}
