//! Diagonal Hodge stars with cut-cell volume fractions.

use serde::{Deserialize, Serialize};

use crate::field::SampledField;
use crate::grid::DIM;
use crate::support::{BoundaryCondition, Support};

pub const DEFAULT_SUBSAMPLES: usize = 8;

/// Lower clamp of a volume fraction.
pub const VOLUME_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Primal,
    Dual,
}

/// Fraction of the unit k-box (k = log2 of the corner count) on which the
/// multilinear interpolant of the corner values is `≤ c`.
///
/// Corner `b` sits at the vertex whose j-th coordinate is bit j of `b`. The
/// box is sampled at the centers of an `s^k` sub-grid. A cut box in which no
/// sample falls inside falls back to the simplex spanned by its best inside
/// corner and the linear crossings along that corner's edges, capped below
/// one sample's weight so refinements stay monotone.
pub fn inside_fraction(corners: &[f64], c: f64, s: usize) -> f64 {
    let k = corners.len().trailing_zeros() as usize;
    assert!(corners.len() == 1 << k && k <= DIM, "corner count must be 1, 2, 4 or 8");
    assert!(s >= 1);
    if corners.iter().all(|&v| v <= c) {
        return 1.0;
    }
    if corners.iter().all(|&v| v > c) {
        return 0.0;
    }
    let mut buf = [0.0; 8];
    buf[..corners.len()].copy_from_slice(corners);
    let count = count_inside(&buf, k, c, s);
    let total = s.pow(k as u32) as f64;
    if count > 0 {
        return count as f64 / total;
    }
    simplex_estimate(corners, k, c).min(0.5 / total)
}

fn count_inside(corners: &[f64; 8], k: usize, c: f64, s: usize) -> usize {
    let n = 1usize << k;
    if corners[..n].iter().all(|&v| v <= c) {
        return s.pow(k as u32);
    }
    if corners[..n].iter().all(|&v| v > c) {
        return 0;
    }
    if k == 0 {
        return usize::from(corners[0] <= c);
    }
    let half = n / 2;
    let mut total = 0;
    let mut reduced = [0.0; 8];
    for i in 0..s {
        let t = (i as f64 + 0.5) / s as f64;
        for b in 0..half {
            reduced[b] = (1.0 - t) * corners[b] + t * corners[b + half];
        }
        total += count_inside(&reduced, k - 1, c, s);
    }
    total
}

fn simplex_estimate(corners: &[f64], k: usize, c: f64) -> f64 {
    let fact = [1.0, 1.0, 2.0, 6.0][k];
    let mut best: f64 = 0.0;
    for (q, &fq) in corners.iter().enumerate() {
        if fq > c {
            continue;
        }
        let mut prod = 1.0;
        for j in 0..k {
            let fnb = corners[q ^ (1 << j)];
            if fnb > c {
                prod *= (c - fq) / (fnb - fq);
            }
        }
        best = best.max(prod / fact);
    }
    best
}

/// Fraction of a dual cell inside the sublevel set. `values[b]` follows the
/// corner convention of [`inside_fraction`]; `None` marks a corner clipped by
/// the grid boundary, where the cell keeps only its half on the present side.
pub fn clipped_inside_fraction(values: &[Option<f64>], c: f64, s: usize) -> f64 {
    let k = values.len().trailing_zeros() as usize;
    let mut corners = [0.0; 8];
    let mut scale = 1.0;
    let mut filled: Vec<Option<f64>> = values.to_vec();
    for j in 0..k {
        let mut lost = false;
        for b in 0..values.len() {
            if b & (1 << j) != 0 {
                continue;
            }
            let (lo, hi) = (b, b | (1 << j));
            match (filled[lo], filled[hi]) {
                (Some(_), None) => {
                    filled[hi] = filled[lo];
                    lost = true;
                }
                (None, Some(_)) => {
                    filled[lo] = filled[hi];
                    lost = true;
                }
                _ => {}
            }
        }
        if lost {
            scale *= 0.5;
        }
    }
    for (b, v) in filled.iter().enumerate() {
        match v {
            Some(x) => corners[b] = *x,
            None => return 0.0,
        }
    }
    scale * inside_fraction(&corners[..values.len()], c, s)
}

/// Absolute k-volume of the inside part of a primal cell or of the dual of a
/// primal cell, clamped to `[1e-10·ℓ^d, ℓ^d]` with d the cell dimension.
pub fn fractional_volume(sampled: &SampledField, k: usize, cell_index: usize, side: Side, s: usize) -> f64 {
    let grid = sampled.grid();
    let l = grid.spacing();
    let cell = grid.cell(k, cell_index);
    let c = sampled.isovalue();
    let (frac, d) = match side {
        Side::Primal => {
            let corners: Vec<f64> = grid
                .cell_vertices(cell)
                .into_iter()
                .map(|v| sampled.primal_values()[v])
                .collect();
            (inside_fraction(&corners, c, s), k)
        }
        Side::Dual => {
            let vals: Vec<Option<f64>> = grid
                .dual_cell_vertices(cell)
                .into_iter()
                .map(|o| o.map(|i| sampled.dual_values()[i]))
                .collect();
            (clipped_inside_fraction(&vals, c, s), DIM - k)
        }
    };
    frac.clamp(VOLUME_FLOOR, 1.0) * l.powi(d as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HodgeStar {
    pub degree: usize,
    pub bc: BoundaryCondition,
    pub diagonal: Vec<f64>,
}

/// Normal: `ℓ^{3−k} / vol(primal cell)`. Tangential: `vol(dual cell) / ℓ^k`.
/// Uncut cells give exactly `ℓ^{3−2k}`.
pub fn hodge_star(sampled: &SampledField, support: &Support, s: usize) -> HodgeStar {
    use rayon::prelude::*;
    let k = support.degree();
    let grid = sampled.grid();
    let l = grid.spacing();
    let c = sampled.isovalue();
    let base = l.powi(DIM as i32 - 2 * k as i32);
    let diagonal = support
        .members()
        .par_iter()
        .map(|&g| {
            let cell = grid.cell(k, g);
            match support.bc() {
                BoundaryCondition::Normal => {
                    let corners: Vec<f64> = grid
                        .cell_vertices(cell)
                        .into_iter()
                        .map(|v| sampled.primal_values()[v])
                        .collect();
                    base / inside_fraction(&corners, c, s).clamp(VOLUME_FLOOR, 1.0)
                }
                BoundaryCondition::Tangential => {
                    let vals: Vec<Option<f64>> = grid
                        .dual_cell_vertices(cell)
                        .into_iter()
                        .map(|o| o.map(|i| sampled.dual_values()[i]))
                        .collect();
                    base * clipped_inside_fraction(&vals, c, s).clamp(VOLUME_FLOOR, 1.0)
                }
            }
        })
        .collect();
    HodgeStar {
        degree: k,
        bc: support.bc(),
        diagonal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncut_and_empty_cells() {
        assert_eq!(inside_fraction(&[-1.0; 8], 0.0, 8), 1.0);
        assert_eq!(inside_fraction(&[1.0; 4], 0.0, 8), 0.0);
        assert_eq!(inside_fraction(&[-1.0], 0.0, 8), 1.0);
    }

    #[test]
    fn half_edge() {
        assert_eq!(inside_fraction(&[-0.5, 0.5], 0.0, 8), 0.5);
        assert_eq!(inside_fraction(&[0.5, -0.5], 0.0, 8), 0.5);
    }

    #[test]
    fn half_face_against_exact_area() {
        // Bilinear interpolant of (−1,−1,+1,+1) is linear in y with the cut at
        // y = 1/2, so the exact area is 1/2.
        let s = DEFAULT_SUBSAMPLES;
        let f = inside_fraction(&[-1.0, -1.0, 1.0, 1.0], 0.0, s);
        assert!((f - 0.5).abs() <= 2.0 / s as f64);
    }

    #[test]
    fn corner_fallback_is_small_and_positive() {
        let f = inside_fraction(&[-0.001, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 0.0, 8);
        assert!(f > 0.0 && f < 0.5 / 512.0 + 1e-15);
        let exact_tip = (0.001f64 / 1.001).powi(3) / 6.0;
        assert!((f - exact_tip).abs() < 1e-15);
    }

    #[test]
    fn clipped_dual_cell() {
        let f = clipped_inside_fraction(&[Some(-1.0), None], 0.0, 8);
        assert_eq!(f, 0.5);
        let f = clipped_inside_fraction(&[None, None, Some(-1.0), Some(-1.0)], 0.0, 8);
        assert_eq!(f, 0.5);
        let g = clipped_inside_fraction(&[Some(-1.0), Some(-1.0), Some(1.0), Some(1.0)], 0.0, 8);
        assert_eq!(g, inside_fraction(&[-1.0, -1.0, 1.0, 1.0], 0.0, 8));
    }

    #[test]
    fn ball_volume_converges_under_refinement() {
        use crate::field::{sample_on_grid, ScalarField};
        use crate::grid::GridComplex;
        use std::sync::Arc;
        let exact = 4.0 * std::f64::consts::PI / 3.0;
        let f = ScalarField::sphere([0.013, -0.021, 0.007], 1.0).unwrap();
        let errors: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&h| {
                let g = Arc::new(GridComplex::centered([0.0; 3], [1.3; 3], h).unwrap());
                let s = sample_on_grid(&f, g.clone(), 0.0);
                let v: f64 = (0..g.num_cells(3))
                    .map(|i| fractional_volume(&s, 3, i, Side::Primal, DEFAULT_SUBSAMPLES))
                    .sum();
                (v - exact).abs()
            })
            .collect();
        for w in errors.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio > 0.0 && ratio <= 0.8, "{errors:?}");
        }
    }
}
