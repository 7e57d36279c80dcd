//! Polar discretization of one fold of the N-fold symmetric plane.
//!
//! The reference domain is the annular sector
//! `S = {1/2 <= r <= 2, |theta| <= pi/(2N)}`. Fields are stored ring-major:
//! node `(i, j)` (radial index `i`, angular index `j`) lives at
//! `i * n_theta + j`, so each radial ring is a contiguous slice.
//!
//! Besides the full sector, a grid may cover a rectangular window
//! `[r_min, r_max] x [-theta_half, theta_half]` of `S`. Fields on a window are
//! understood to vanish on the rest of `S`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inner radius of the sector `S`.
pub const R_LO: f64 = 0.5;
/// Outer radius of the sector `S`.
pub const R_HI: f64 = 2.0;

/// Half opening angle of `S` for `n_folds` folds.
pub fn sector_half_angle(n_folds: usize) -> f64 {
    PI / (2.0 * n_folds as f64)
}

/// Patch length scale `eps` defined by `lambda * pi * eps^2 = 1`.
pub fn patch_length_scale(lambda: f64) -> f64 {
    1.0 / (lambda * PI).sqrt()
}

/// Uniform midpoint grid on (a window of) the sector `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorGrid {
    n_folds: usize,
    n_r: usize,
    n_theta: usize,
    r_min: f64,
    r_max: f64,
    theta_half: f64,
    dr: f64,
    dtheta: f64,
    radii: Vec<f64>,
    angles: Vec<f64>,
}

impl SectorGrid {
    /// Grid covering the whole sector `S`.
    pub fn new(n_folds: usize, n_r: usize, n_theta: usize) -> Result<Self> {
        Self::window(n_folds, n_r, n_theta, R_LO, R_HI, sector_half_angle(n_folds))
    }

    /// Grid covering the window `[r_min, r_max] x [-theta_half, theta_half]` of `S`.
    pub fn window(
        n_folds: usize,
        n_r: usize,
        n_theta: usize,
        r_min: f64,
        r_max: f64,
        theta_half: f64,
    ) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::InvalidGrid(format!(
                "n_folds must be at least 2, got {n_folds}"
            )));
        }
        if n_r == 0 || n_theta == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid sizes must be positive, got n_r = {n_r}, n_theta = {n_theta}"
            )));
        }
        if n_theta % 2 == 0 {
            return Err(Error::InvalidGrid(format!(
                "n_theta must be odd so that a cell is centred at theta = 0, got {n_theta}"
            )));
        }
        let half = sector_half_angle(n_folds);
        let slack = 1e-12;
        if !(r_min >= R_LO - slack && r_max <= R_HI + slack && r_min < r_max) {
            return Err(Error::InvalidGrid(format!(
                "radial window [{r_min}, {r_max}] must be a nonempty part of [{R_LO}, {R_HI}]"
            )));
        }
        if !(theta_half > 0.0 && theta_half <= half * (1.0 + slack)) {
            return Err(Error::InvalidGrid(format!(
                "angular half-width {theta_half} must lie in (0, pi/(2N)] = (0, {half}]"
            )));
        }
        let r_min = r_min.max(R_LO);
        let r_max = r_max.min(R_HI);
        let theta_half = theta_half.min(half);

        let dr = (r_max - r_min) / n_r as f64;
        let dtheta = 2.0 * theta_half / n_theta as f64;
        let radii = (0..n_r).map(|i| r_min + (i as f64 + 0.5) * dr).collect();
        let centre = (n_theta / 2) as isize;
        // exact mirror symmetry: angle of cell j is (j - centre) * dtheta
        let angles = (0..n_theta)
            .map(|j| (j as isize - centre) as f64 * dtheta)
            .collect();
        Ok(Self {
            n_folds,
            n_r,
            n_theta,
            r_min,
            r_max,
            theta_half,
            dr,
            dtheta,
            radii,
            angles,
        })
    }

    /// Square-ish window of half-width `half_width` around `(1, 0)`, clipped to `S`.
    ///
    /// The angular half-width is chosen so that the arc length at `r = 1`
    /// matches the radial half-width.
    pub fn centred_window(
        n_folds: usize,
        n_r: usize,
        n_theta: usize,
        half_width: f64,
    ) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "window half-width must be positive, got {half_width}"
            )));
        }
        let r_min = (1.0 - half_width).max(R_LO);
        let r_max = (1.0 + half_width).min(R_HI);
        let theta_half = half_width.min(sector_half_angle(n_folds));
        Self::window(n_folds, n_r, n_theta, r_min, r_max, theta_half)
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn len(&self) -> usize {
        self.n_r * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn theta_half(&self) -> f64 {
        self.theta_half
    }

    /// Index of the angular cell centred at `theta = 0`.
    pub fn centre_index(&self) -> usize {
        self.n_theta / 2
    }

    /// Whether the grid spans the full sector `S`.
    pub fn is_full_sector(&self) -> bool {
        (self.r_min - R_LO).abs() < 1e-12
            && (self.r_max - R_HI).abs() < 1e-12
            && (self.theta_half - sector_half_angle(self.n_folds)).abs() < 1e-12
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_theta + j
    }

    /// `(i, j)` of a flat node index.
    pub fn split(&self, node: usize) -> (usize, usize) {
        (node / self.n_theta, node % self.n_theta)
    }

    /// Polar coordinates of a node.
    pub fn polar(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.split(node);
        (self.radii[i], self.angles[j])
    }

    /// Cartesian coordinates of a node.
    pub fn cartesian(&self, node: usize) -> (f64, f64) {
        let (r, t) = self.polar(node);
        (r * t.cos(), r * t.sin())
    }

    /// Quadrature weight `r_i * dr * dtheta` of every node on ring `i`.
    pub fn ring_weight(&self, i: usize) -> f64 {
        self.radii[i] * self.dr * self.dtheta
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.ring_weight(node / self.n_theta)
    }

    /// All quadrature weights in node order.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|a| self.weight(a)).collect()
    }

    /// Exact area of the covered window.
    pub fn area(&self) -> f64 {
        self.theta_half * (self.r_max * self.r_max - self.r_min * self.r_min)
    }

    /// Largest cell diameter.
    pub fn cell_diameter(&self) -> f64 {
        let arc = self.r_max * self.dtheta;
        (self.dr * self.dr + arc * arc).sqrt()
    }

    /// Whether the closed disk `B((centre_r, 0), radius)` lies inside the
    /// covered window.
    pub fn contains_disk(&self, centre_r: f64, radius: f64) -> bool {
        if centre_r - radius < self.r_min || centre_r + radius > self.r_max {
            return false;
        }
        // distance from the centre to the bounding ray theta = theta_half
        let to_ray = if self.theta_half >= PI / 2.0 {
            f64::INFINITY
        } else {
            centre_r * self.theta_half.sin()
        };
        radius <= to_ray
    }
}

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    n_r: usize,
    n_theta: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &SectorGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &SectorGrid, value: f64) -> Self {
        Self {
            n_r: grid.n_r(),
            n_theta: grid.n_theta(),
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: &SectorGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            n_r: grid.n_r(),
            n_theta: grid.n_theta(),
            values,
        })
    }

    /// Field sampled from a function of polar coordinates.
    pub fn from_fn(grid: &SectorGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|a| {
                let (r, t) = grid.polar(a);
                f(r, t)
            })
            .collect();
        Self {
            n_r: grid.n_r(),
            n_theta: grid.n_theta(),
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Values on radial ring `i`, ordered by increasing angle.
    pub fn ring(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_theta..(i + 1) * self.n_theta]
    }

    /// Checks that the field was built on a grid of the same shape.
    pub fn check_grid(&self, grid: &SectorGrid) -> Result<()> {
        if self.n_r != grid.n_r() || self.n_theta != grid.n_theta() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: self.values.len(),
            });
        }
        Ok(())
    }

    /// Checks the vorticity box constraint `0 <= value <= lambda`.
    pub fn check_vorticity(&self, lambda: f64) -> Result<()> {
        match self
            .values
            .iter()
            .position(|&v| !(v >= 0.0 && v <= lambda))
        {
            Some(a) => Err(Error::OutOfBounds {
                node: a,
                value: self.values[a],
                lambda,
            }),
            None => Ok(()),
        }
    }

    /// Linear combination `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(ScalarField {
            n_r: self.n_r,
            n_theta: self.n_theta,
            values,
        })
    }

    /// Area-weighted relative L1 distance `sum w|a - b| / sum w|b|`.
    pub fn relative_l1_change(&self, previous: &ScalarField, grid: &SectorGrid) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, (x, y)) in self.values.iter().zip(&previous.values).enumerate() {
            let w = grid.weight(a);
            num += w * (x - y).abs();
            den += w * y.abs();
        }
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }
}

/// Quadrature `sum_ij field(i,j) * density(r_i, theta_j) * w_ij`.
pub fn integrate(
    grid: &SectorGrid,
    field: &ScalarField,
    density: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    field.check_grid(grid)?;
    let terms: Vec<f64> = field
        .values()
        .iter()
        .enumerate()
        .map(|(a, &v)| {
            let (r, t) = grid.polar(a);
            v * density(r, t) * grid.weight(a)
        })
        .collect();
    Ok(crate::numeric::pairwise_sum(&terms))
}

/// Circulation `M` of one fold.
pub fn mass(grid: &SectorGrid, field: &ScalarField) -> Result<f64> {
    integrate(grid, field, |_, _| 1.0)
}

/// Impulse `L` of one fold.
pub fn impulse(grid: &SectorGrid, field: &ScalarField) -> Result<f64> {
    integrate(grid, field, |r, _| r * r)
}

/// Radius `r_eps` of the disk centre for which `r^2 + eps^2/2 = 1`,
/// i.e. the continuum disk of area `1/lambda` has unit impulse.
pub fn varpi_centre(epsilon: f64) -> f64 {
    let target = |r: f64| r * r + 0.5 * epsilon * epsilon - 1.0;
    let (mut lo, mut hi) = (1.0 - epsilon, 1.0 + epsilon);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if target(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `lambda` for which the reference disk fits inside the grid window.
pub fn min_lambda_for(grid: &SectorGrid) -> f64 {
    let fits = |eps: f64| grid.contains_disk(varpi_centre(eps), eps);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if fits(hi) {
        return 1.0 / (PI * hi * hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 / (PI * lo * lo)
}

/// Reference patch: `lambda` on the nodes inside `B((r_eps, 0), eps)`, zero elsewhere.
pub fn make_varpi(grid: &SectorGrid, lambda: f64) -> Result<ScalarField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    let eps = patch_length_scale(lambda);
    let r_eps = varpi_centre(eps);
    if !grid.contains_disk(r_eps, eps) {
        return Err(Error::Infeasible(format!(
            "disk of radius {eps:.6} around ({r_eps:.6}, 0) does not fit inside the grid; \
             lambda must be at least {:.6}",
            min_lambda_for(grid)
        )));
    }
    let eps2 = eps * eps;
    Ok(ScalarField::from_fn(grid, |r, t| {
        let d2 = r * r + r_eps * r_eps - 2.0 * r * r_eps * t.cos();
        if d2 < eps2 {
            lambda
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_grid() {
        let g = SectorGrid::new(2, 1, 1).unwrap();
        assert_eq!(g.len(), 1);
        let (r, t) = g.polar(0);
        assert_eq!(r, 1.25);
        assert_eq!(t, 0.0);
        let expected = 1.25 * 1.5 * (PI / 2.0);
        assert!((g.weight(0) - expected).abs() < 1e-15);
    }

    #[test]
    fn sector_area_is_reproduced() {
        let g = SectorGrid::new(3, 8, 9).unwrap();
        let total: f64 = g.weights().iter().sum();
        let exact = 15.0 * PI / 24.0;
        assert!((total - exact).abs() / exact < 1e-12);
        let ones = ScalarField::constant(&g, 1.0);
        let m = mass(&g, &ones).unwrap();
        assert!((m - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(SectorGrid::new(2, 4, 4).is_err());
        assert!(SectorGrid::new(2, 0, 3).is_err());
        assert!(SectorGrid::new(1, 4, 3).is_err());
    }

    #[test]
    fn nodes_lie_strictly_inside() {
        let g = SectorGrid::new(4, 10, 11).unwrap();
        let half = sector_half_angle(4);
        for a in 0..g.len() {
            let (r, t) = g.polar(a);
            assert!(r > R_LO && r < R_HI);
            assert!(t.abs() < half);
        }
        let c = g.centre_index();
        for j in 0..g.n_theta() {
            assert_eq!(g.angles()[j], -g.angles()[2 * c - j]);
        }
    }

    #[test]
    fn zero_field_integrates_to_zero() {
        let g = SectorGrid::new(3, 6, 5).unwrap();
        let z = ScalarField::zeros(&g);
        assert_eq!(integrate(&g, &z, |r, t| r * t.cos() + 4.0).unwrap(), 0.0);
    }

    #[test]
    fn impulse_quadrature_converges_at_second_order() {
        let exact = (PI / 3.0) * (R_HI.powi(4) - R_LO.powi(4)) / 4.0;
        let err = |n_r: usize, n_t: usize| {
            let g = SectorGrid::new(3, n_r, n_t).unwrap();
            let l = impulse(&g, &ScalarField::constant(&g, 1.0)).unwrap();
            (l - exact).abs()
        };
        let e1 = err(8, 9);
        let e2 = err(16, 19);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn varpi_centre_matches_closed_form() {
        let lambda = 1e4;
        let eps = patch_length_scale(lambda);
        assert!((eps - 5.641_895_835_477_563e-3).abs() < 1e-15);
        let r = varpi_centre(eps);
        assert!((r - (1.0 - eps * eps / 2.0).sqrt()).abs() < 1e-14);
        assert!((r - 0.999_992_042).abs() < 1e-8);
        assert!((varpi_centre(1e-9) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn varpi_rejects_large_disk() {
        let g = SectorGrid::new(2, 16, 15).unwrap();
        let err = make_varpi(&g, 1.0).unwrap_err();
        assert!(err.to_string().contains("lambda must be at least"));
    }

    #[test]
    fn varpi_mass_is_close_to_one() {
        let g = SectorGrid::new(2, 96, 95).unwrap();
        let w = make_varpi(&g, 50.0).unwrap();
        let m = mass(&g, &w).unwrap();
        assert!((m - 1.0).abs() < 0.05, "mass {m}");
        w.check_vorticity(50.0).unwrap();
    }
}
