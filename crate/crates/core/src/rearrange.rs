//! Angular Steiner symmetrization and the discrete bathtub maximizer.

use crate::error::{Error, Result};
use crate::geometry::{ScalarField, SectorGrid};

/// Order in which ring cells receive decreasing values: the centre cell
/// first, then `+1, -1, +2, -2, ...` (the `+theta` side wins ties).
pub fn placement_order(n_theta: usize) -> Vec<usize> {
    let c = n_theta / 2;
    let mut order = Vec::with_capacity(n_theta);
    if n_theta % 2 == 1 {
        order.push(c);
        for k in 1..=c {
            order.push(c + k);
            order.push(c - k);
        }
    } else {
        // even rings only occur in the one-dimensional toy problems
        for k in 0..c {
            order.push(c + k);
            order.push(c - 1 - k);
        }
    }
    order
}

/// Symmetric-decreasing rearrangement of one ring.
pub fn symmetrize_ring(ring: &[f64]) -> Vec<f64> {
    let mut sorted = ring.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; ring.len()];
    for (v, pos) in sorted.into_iter().zip(placement_order(ring.len())) {
        out[pos] = v;
    }
    out
}

/// Angular Steiner symmetrization: every radial ring is replaced by its
/// symmetric-decreasing rearrangement about `theta = 0`.
pub fn steiner_symmetrize(omega: &ScalarField) -> Result<ScalarField> {
    if let Some((node, &value)) = omega
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(Error::NegativeValue { node, value });
    }
    let n_t = omega.n_theta();
    let mut out = omega.clone();
    for (ring_in, ring_out) in omega
        .values()
        .chunks(n_t)
        .zip(out.values_mut().chunks_mut(n_t))
    {
        ring_out.copy_from_slice(&symmetrize_ring(ring_in));
    }
    Ok(out)
}

/// Whether every ring is already symmetric and non-increasing in `|theta|`.
pub fn is_steiner_symmetric(omega: &ScalarField) -> bool {
    let n_t = omega.n_theta();
    omega
        .values()
        .chunks(n_t)
        .all(|ring| symmetrize_ring(ring) == ring)
}

/// Node ranking used by the bathtub projection: larger score first, then
/// smaller `|theta|`, then smaller `r`, then the `+theta` side.
pub fn bathtub_ranking(grid: &SectorGrid, scores: &ScalarField) -> Vec<usize> {
    let vals = scores.values();
    let mut nodes: Vec<usize> = (0..grid.len()).collect();
    nodes.sort_by(|&a, &b| {
        let (ra, ta) = grid.polar(a);
        let (rb, tb) = grid.polar(b);
        vals[b]
            .total_cmp(&vals[a])
            .then(ta.abs().total_cmp(&tb.abs()))
            .then(ra.total_cmp(&rb))
            .then(tb.total_cmp(&ta))
    });
    nodes
}

/// Field equal to `lambda` on the `k` best-ranked nodes and zero elsewhere,
/// where `k` is the largest count with `lambda * (sum of their weights) <= mass_budget`.
pub fn bathtub_project(
    grid: &SectorGrid,
    scores: &ScalarField,
    mass_budget: f64,
    lambda: f64,
) -> Result<ScalarField> {
    scores.check_grid(grid)?;
    fill_ranked(grid, &bathtub_ranking(grid, scores), mass_budget, lambda, false)
}

/// Exact-budget variant of [`bathtub_project`]: the best-ranked nodes get
/// `lambda` and the first node that does not fit receives the remainder, so
/// the returned field carries exactly `mass_budget` (up to rounding).
pub fn bathtub_fill(
    grid: &SectorGrid,
    scores: &ScalarField,
    mass_budget: f64,
    lambda: f64,
) -> Result<ScalarField> {
    scores.check_grid(grid)?;
    fill_ranked(grid, &bathtub_ranking(grid, scores), mass_budget, lambda, true)
}

/// Fills nodes in the given order; see [`bathtub_project`] and [`bathtub_fill`].
pub fn fill_ranked(
    grid: &SectorGrid,
    ranking: &[usize],
    mass_budget: f64,
    lambda: f64,
    partial: bool,
) -> Result<ScalarField> {
    if !(mass_budget > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mass budget and lambda must be positive, got {mass_budget} and {lambda}"
        )));
    }
    let capacity = lambda * grid.weights().iter().sum::<f64>();
    let slack = 1e-12 * capacity;
    if mass_budget > capacity + slack {
        return Err(Error::Infeasible(format!(
            "mass budget {mass_budget} exceeds the capacity {capacity} of the grid"
        )));
    }
    let mut out = ScalarField::zeros(grid);
    let mut used = 0.0;
    for &node in ranking {
        let m = lambda * grid.weight(node);
        if used + m > mass_budget + slack {
            if partial && mass_budget > used {
                out.values_mut()[node] = (mass_budget - used) / grid.weight(node);
            }
            break;
        }
        used += m;
        out.values_mut()[node] = lambda;
    }
    Ok(out)
}

/// Centred block of `m` cells in a row of `n` cells, placed with the same
/// alternating rule as the ring symmetrization.
pub fn centred_block(n: usize, m: usize) -> Vec<bool> {
    let mut block = vec![false; n];
    for &pos in placement_order(n).iter().take(m) {
        block[pos] = true;
    }
    block
}

/// `sum_{x,y} f(|x - y|) g(x) h(y)` for 0/1 rows.
pub fn riesz_form(f: &[f64], g: &[bool], h: &[bool]) -> f64 {
    let mut acc = 0.0;
    for (x, &gx) in g.iter().enumerate() {
        if !gx {
            continue;
        }
        for (y, &hy) in h.iter().enumerate() {
            if hy {
                acc += f[x.abs_diff(y)];
            }
        }
    }
    acc
}

/// One-dimensional bathtub problem for Riesz integrals on `n` cells:
/// returns the centred blocks of sizes `mu` and `nu`.
pub fn riesz_bathtub_1d(n: usize, mu: usize, nu: usize) -> Result<(Vec<bool>, Vec<bool>)> {
    if mu > n || nu > n {
        return Err(Error::Infeasible(format!(
            "budgets ({mu}, {nu}) exceed the {n} available cells"
        )));
    }
    Ok((centred_block(n, mu), centred_block(n, nu)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{integrate, mass};
    use proptest::prelude::*;

    #[test]
    fn five_cell_ring_example() {
        assert_eq!(
            symmetrize_ring(&[1.0, 0.0, 2.0, 0.0, 0.0]),
            vec![0.0, 0.0, 2.0, 1.0, 0.0]
        );
    }

    #[test]
    fn rejects_negative_values() {
        let g = SectorGrid::new(2, 1, 3).unwrap();
        let f = ScalarField::from_values(&g, vec![1.0, -0.5, 0.0]).unwrap();
        assert!(steiner_symmetrize(&f).is_err());
    }

    #[test]
    fn symmetric_decreasing_ring_is_fixed() {
        let ring = [0.0, 1.0, 3.0, 5.0, 3.0, 1.0, 0.0];
        assert_eq!(symmetrize_ring(&ring), ring.to_vec());
    }

    proptest! {
        #[test]
        fn symmetrization_invariants(values in prop::collection::vec(0.0f64..10.0, 5 * 9)) {
            let g = SectorGrid::new(3, 5, 9).unwrap();
            let f = ScalarField::from_values(&g, values).unwrap();
            let s = steiner_symmetrize(&f).unwrap();
            // idempotence
            prop_assert_eq!(steiner_symmetrize(&s).unwrap(), s.clone());
            prop_assert!(is_steiner_symmetric(&s));
            for i in 0..5 {
                let mut a = f.ring(i).to_vec();
                let mut b = s.ring(i).to_vec();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                // per-ring multiset, hence equimeasurability at every level
                prop_assert_eq!(a, b);
            }
            let m0 = integrate(&g, &f, |r, _| r.powi(3) + 1.0).unwrap();
            let m1 = integrate(&g, &s, |r, _| r.powi(3) + 1.0).unwrap();
            prop_assert!((m0 - m1).abs() <= 1e-12 * m0.abs());
        }
    }

    #[test]
    fn bathtub_single_cell() {
        let g = SectorGrid::new(2, 4, 5).unwrap();
        let scores = ScalarField::from_fn(&g, |r, t| -(r - 1.2).abs() - t.abs());
        let best = bathtub_ranking(&g, &scores)[0];
        let lambda = 3.0;
        let budget = lambda * g.weight(best) * 1.0000001;
        let p = bathtub_project(&g, &scores, budget, lambda).unwrap();
        let support: Vec<usize> = (0..g.len()).filter(|&a| p.values()[a] > 0.0).collect();
        assert_eq!(support, vec![best]);
    }

    #[test]
    fn bathtub_saturates_at_capacity() {
        let g = SectorGrid::new(2, 4, 5).unwrap();
        let lambda = 2.0;
        let cap = lambda * g.area();
        let scores = ScalarField::from_fn(&g, |r, _| r);
        let p = bathtub_project(&g, &scores, cap, lambda).unwrap();
        assert!(p.values().iter().all(|&v| v == lambda));
        assert!(bathtub_project(&g, &scores, 1.01 * cap, lambda).is_err());
        assert!((mass(&g, &p).unwrap() - cap).abs() < 1e-12);
    }

    #[test]
    fn fill_meets_budget_with_one_partial_node() {
        let g = SectorGrid::new(3, 6, 7).unwrap();
        let scores = ScalarField::from_fn(&g, |r, t| -(r - 1.1).powi(2) - t * t);
        let lambda = 4.0;
        let budget = 0.37 * lambda * g.area();
        let f = bathtub_fill(&g, &scores, budget, lambda).unwrap();
        assert!((mass(&g, &f).unwrap() - budget).abs() < 1e-13);
        let partial = f.values().iter().filter(|&&v| v > 0.0 && v < lambda).count();
        assert!(partial <= 1);
    }

    #[test]
    fn centred_blocks() {
        assert_eq!(centred_block(5, 2), vec![false, false, true, true, false]);
        assert_eq!(centred_block(4, 1), vec![false, false, true, false]);
        assert_eq!(centred_block(4, 3), vec![false, true, true, true]);
    }
}
