//! Combinatorial Betti numbers of a sampled sublevel set, independent of any
//! Laplacian: flood fills over the vertex lattice plus the Euler characteristic
//! of the normal support.

use petgraph::unionfind::UnionFind;

use crate::field::SampledField;
use crate::grid::{GridComplex, DIM};
use crate::support::{BoundaryCondition, Support};

/// Labels of connected components of the vertices selected by `keep`, with
/// 26-neighbour (`diagonal = true`) or 6-neighbour adjacency. Unselected
/// vertices get `None`; labels run from 0 to the component count.
pub fn vertex_components(grid: &GridComplex, keep: &[bool], diagonal: bool) -> (usize, Vec<Option<usize>>) {
    let [nx, ny, nz] = grid.dims();
    let n = nx * ny * nz;
    assert_eq!(keep.len(), n);
    let mut uf = UnionFind::<usize>::new(n);
    let offsets: Vec<[isize; 3]> = neighbour_offsets(diagonal);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = grid.vertex_index([x, y, z]);
                if !keep[v] {
                    continue;
                }
                for o in &offsets {
                    let (qx, qy, qz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                        continue;
                    }
                    let w = grid.vertex_index([qx as usize, qy as usize, qz as usize]);
                    if keep[w] {
                        uf.union(v, w);
                    }
                }
            }
        }
    }
    let mut root_label = vec![usize::MAX; n];
    let mut labels = vec![None; n];
    let mut count = 0;
    for v in 0..n {
        if !keep[v] {
            continue;
        }
        let r = uf.find_mut(v);
        if root_label[r] == usize::MAX {
            root_label[r] = count;
            count += 1;
        }
        labels[v] = Some(root_label[r]);
    }
    (count, labels)
}

/// Half of the neighbourhood (the other half is reached symmetrically).
fn neighbour_offsets(diagonal: bool) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let o = [dx, dy, dz];
                let nonzero = o.iter().filter(|&&d| d != 0).count();
                if nonzero == 0 || (!diagonal && nonzero != 1) {
                    continue;
                }
                // Keep offsets that are lexicographically positive.
                let first = o.iter().rev().find(|&&d| d != 0).unwrap();
                if *first > 0 {
                    out.push(o);
                }
            }
        }
    }
    out
}

/// Betti numbers `(β₀, β₁, β₂)` of the sublevel set as seen by the normal
/// support: β₀ from 26-connected inside vertices, β₂ from 6-connected outside
/// vertices (minus the unbounded one), β₁ from the Euler characteristic.
/// Meaningful when the sublevel set stays clear of the grid boundary.
pub fn betti_numbers(sampled: &SampledField) -> [usize; 3] {
    let grid = sampled.grid();
    let inside: Vec<bool> = (0..grid.num_vertices()).map(|v| sampled.primal_inside(v)).collect();
    let (b0, _) = vertex_components(grid, &inside, true);
    if b0 == 0 {
        return [0, 0, 0];
    }
    let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
    let (nout, _) = vertex_components(grid, &outside, false);
    let b2 = nout.saturating_sub(1);
    let counts: Vec<i64> = (0..=DIM)
        .map(|k| Support::compute(sampled, k, BoundaryCondition::Normal).len() as i64)
        .collect();
    // The normal support is a union of open stars, so its cell counts give the
    // Euler characteristic with alternating signs starting from the top degree.
    let chi = counts[3] - counts[2] + counts[1] - counts[0];
    let b1 = b0 as i64 + b2 as i64 - chi;
    [b0, b1.max(0) as usize, b2]
}

/// Number of 3-cells whose center is inside, per 26-connected inside component.
pub fn component_cell_counts(sampled: &SampledField) -> Vec<usize> {
    let grid = sampled.grid();
    let inside: Vec<bool> = (0..grid.num_vertices()).map(|v| sampled.primal_inside(v)).collect();
    let (count, labels) = vertex_components(grid, &inside, true);
    let mut cells = vec![0usize; count];
    for c in 0..grid.num_cells(3) {
        if !sampled.dual_inside(c) {
            continue;
        }
        let cell = grid.cell(3, c);
        if let Some(l) = grid.cell_vertices(cell).into_iter().find_map(|v| labels[v]) {
            cells[l] += 1;
        }
    }
    cells
}

/// Number of components of `upper` that contain a component of `lower`: the
/// rank of the map on `H₀` induced by the inclusion of sublevel sets.
pub fn surviving_components(lower: &SampledField, upper: &SampledField) -> usize {
    let grid = upper.grid();
    let n = grid.num_vertices();
    let inside: Vec<bool> = (0..n).map(|v| upper.primal_inside(v)).collect();
    let (count, labels) = vertex_components(grid, &inside, true);
    let mut hit = vec![false; count];
    for v in 0..n {
        if lower.primal_inside(v) {
            if let Some(l) = labels[v] {
                hit[l] = true;
            }
        }
    }
    hit.into_iter().filter(|&h| h).count()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::field::{sample_on_grid, ScalarField};

    #[test]
    fn offsets_cover_half_neighbourhoods() {
        assert_eq!(neighbour_offsets(true).len(), 13);
        assert_eq!(neighbour_offsets(false).len(), 3);
    }

    #[test]
    fn canonical_shapes() {
        let grid = Arc::new(GridComplex::centered([0.0; 3], [2.0; 3], 0.125).unwrap());
        let ball = ScalarField::sphere([0.01, 0.02, -0.015], 1.0).unwrap();
        assert_eq!(betti_numbers(&sample_on_grid(&ball, grid.clone(), 0.0)), [1, 0, 0]);
        let shell = ScalarField::shell([0.0; 3], 0.6, 1.3).unwrap();
        assert_eq!(betti_numbers(&sample_on_grid(&shell, grid.clone(), 0.0)), [1, 0, 1]);
        let torus = ScalarField::torus([0.0; 3], 1.2, 0.4).unwrap();
        assert_eq!(betti_numbers(&sample_on_grid(&torus, grid, 0.0)), [1, 1, 0]);
    }
}
