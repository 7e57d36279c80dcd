//! Riesz kernel folded over the N symmetric copies of the sector.
//!
//! `kappa(r, r', xi) = sum_n c_s / (r^2 + r'^2 - 2 r r' cos(xi - 2 pi n / N))^(1 - s)`
//! is the interaction between a point of the fold and all N images of another
//! point. On a uniform angular grid it depends on the angular index only
//! through `|j - j'|`, so the discrete operator is stored as one Toeplitz
//! block per pair of rings.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ScalarField, SectorGrid};
use crate::numeric::gamma;

/// Upper bound on stored kernel entries (`n_r^2 * n_theta`).
pub const MAX_TABLE_ENTRIES: usize = 50_000_000;

/// `c_s = Gamma(1 - s) / (2^(2s) pi Gamma(s))`, the constant of the
/// fundamental solution of `(-Delta)^s` in the plane.
pub fn riesz_constant(s: f64) -> Result<f64> {
    check_exponent(s)?;
    Ok(gamma(1.0 - s) / (2f64.powf(2.0 * s) * PI * gamma(s)))
}

fn check_exponent(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "s must lie in (0,1), got {s}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    s: f64,
    n_folds: usize,
    c_s: f64,
}

impl KernelParams {
    pub fn new(s: f64, n_folds: usize) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_folds must be at least 2, got {n_folds}"
            )));
        }
        Ok(Self {
            s,
            n_folds,
            c_s: riesz_constant(s)?,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn c_s(&self) -> f64 {
        self.c_s
    }

    /// Exponent `1 - s` of the squared distance.
    fn power(&self) -> f64 {
        1.0 - self.s
    }

    /// Folded kernel without the singularity check.
    fn kappa_unchecked(&self, r: f64, rp: f64, xi: f64) -> f64 {
        let step = 2.0 * PI / self.n_folds as f64;
        let base = r * r + rp * rp;
        let cross = 2.0 * r * rp;
        let mut acc = 0.0;
        for n in 0..self.n_folds {
            let d2 = base - cross * (xi - step * n as f64).cos();
            acc += d2.powf(-self.power());
        }
        self.c_s * acc
    }

    /// Sum of the image terms `n = 1..N-1` at zero angular offset and `r = r'`.
    fn image_terms_on_diagonal(&self, r: f64) -> f64 {
        let step = 2.0 * PI / self.n_folds as f64;
        let mut acc = 0.0;
        for n in 1..self.n_folds {
            let d2 = 2.0 * r * r * (1.0 - (step * n as f64).cos());
            acc += d2.powf(-self.power());
        }
        self.c_s * acc
    }
}

/// Folded Riesz kernel `kappa_s(r, r', xi)`.
pub fn kappa(params: &KernelParams, r: f64, r_prime: f64, xi: f64) -> Result<f64> {
    if !(r > 0.0 && r_prime > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radii must be positive, got r = {r}, r' = {r_prime}"
        )));
    }
    if r == r_prime {
        let step = 2.0 * PI / params.n_folds as f64;
        let turns = xi / step;
        if (turns - turns.round()).abs() < 1e-12 {
            return Err(Error::Singular { r, xi });
        }
    }
    Ok(params.kappa_unchecked(r, r_prime, xi))
}

/// Integral of `c_s |x|^(-2(1-s))` over the disk with the same area as the cell:
/// `c_s pi h^(2s) / s` with `h = sqrt(cell_area / pi)`.
pub fn self_cell_weight(params: &KernelParams, cell_area: f64) -> f64 {
    let s = params.s;
    let h2 = cell_area / PI;
    params.c_s * PI * h2.powf(s) / s
}

/// Discrete operator `K_s` on a grid.
///
/// Entry `T[(i,j),(i',j')]` is `kappa(r_i, r_i', theta_j - theta_j') * w_i'`
/// off the diagonal; on the diagonal the singular `n = 0` image is replaced by
/// [`self_cell_weight`] while the other images are kept.
#[derive(Clone, Debug)]
pub struct KernelTable {
    grid: SectorGrid,
    params: KernelParams,
    /// `blocks[(i * n_r + i') * n_theta + d]` = entry for angular offset `d = |j - j'|`.
    blocks: Vec<f64>,
}

impl KernelTable {
    pub fn build(grid: &SectorGrid, params: KernelParams) -> Result<Self> {
        if grid.n_folds() != params.n_folds {
            return Err(Error::InvalidParameter(format!(
                "grid has {} folds but kernel has {}",
                grid.n_folds(),
                params.n_folds
            )));
        }
        let n_r = grid.n_r();
        let n_t = grid.n_theta();
        let entries = n_r * n_r * n_t;
        if entries > MAX_TABLE_ENTRIES {
            return Err(Error::TooLarge {
                entries,
                cap: MAX_TABLE_ENTRIES,
            });
        }
        let radii = grid.radii();
        let dtheta = grid.dtheta();
        let mut blocks = vec![0.0; entries];
        blocks
            .par_chunks_mut(n_r * n_t)
            .enumerate()
            .for_each(|(i, row)| {
                let r = radii[i];
                for (ip, block) in row.chunks_mut(n_t).enumerate() {
                    let rp = radii[ip];
                    let w = grid.ring_weight(ip);
                    for (d, entry) in block.iter_mut().enumerate() {
                        *entry = if i == ip && d == 0 {
                            self_cell_weight(&params, w) + params.image_terms_on_diagonal(r) * w
                        } else {
                            params.kappa_unchecked(r, rp, d as f64 * dtheta) * w
                        };
                    }
                }
            });
        Ok(Self {
            grid: grid.clone(),
            params,
            blocks,
        })
    }

    pub fn grid(&self) -> &SectorGrid {
        &self.grid
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Dense matrix entry between target node `a` and source node `b`.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let (i, j) = self.grid.split(a);
        let (ip, jp) = self.grid.split(b);
        let n_t = self.grid.n_theta();
        let d = j.abs_diff(jp);
        self.blocks[(i * self.grid.n_r() + ip) * n_t + d]
    }

    /// `(K_s omega)(node) = sum_node' T[node, node'] omega(node')`.
    pub fn apply(&self, omega: &ScalarField) -> Result<ScalarField> {
        omega.check_grid(&self.grid)?;
        let n_r = self.grid.n_r();
        let n_t = self.grid.n_theta();
        let src = omega.values();
        // nonzero sources per ring; patch supports are small next to the grid
        let sparse: Vec<Vec<(usize, f64)>> = src
            .chunks(n_t)
            .map(|ring| {
                ring.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(jp, &v)| (jp, v))
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; self.grid.len()];
        out.par_chunks_mut(n_t).enumerate().for_each(|(i, ring_out)| {
            for (ip, ring_src) in sparse.iter().enumerate() {
                if ring_src.is_empty() {
                    continue;
                }
                let block = &self.blocks[(i * n_r + ip) * n_t..(i * n_r + ip + 1) * n_t];
                for (j, acc) in ring_out.iter_mut().enumerate() {
                    let mut sum = 0.0;
                    for &(jp, v) in ring_src {
                        sum += block[j.abs_diff(jp)] * v;
                    }
                    *acc += sum;
                }
            }
        });
        ScalarField::from_values(&self.grid, out)
    }
}

/// Convenience wrapper for [`KernelTable::build`].
pub fn build_kernel_table(grid: &SectorGrid, params: KernelParams) -> Result<KernelTable> {
    KernelTable::build(grid, params)
}

/// Convenience wrapper for [`KernelTable::apply`].
pub fn apply_ks(table: &KernelTable, omega: &ScalarField) -> Result<ScalarField> {
    table.apply(omega)
}
