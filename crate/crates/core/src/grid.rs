//! Oriented cubical cells of a regular 3D Cartesian grid.
//!
//! A k-cell is the box spanned from a base vertex along a set of k coordinate
//! axes, encoded as a 3-bit mask. Cells are oriented by ascending axis order.
//! Within a degree, cells are numbered block-wise by ascending mask value and,
//! inside a block, by the base vertex in x-fastest order.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::sparse::Csr;

pub const DIM: usize = 3;

/// Axis masks of each degree, ascending.
pub const MASKS: [&[u8]; 4] = [&[0b000], &[0b001, 0b010, 0b100], &[0b011, 0b101, 0b110], &[0b111]];

/// Signed incidence matrix with integer entries.
pub type IncidenceMatrix = Csr<i32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub base: [usize; 3],
    pub axes: u8,
}

impl CellId {
    pub fn degree(&self) -> usize {
        self.axes.count_ones() as usize
    }

    /// Axes spanned by the cell, ascending.
    pub fn axis_list(&self) -> impl Iterator<Item = usize> + '_ {
        (0..DIM).filter(move |a| self.axes & (1 << a) != 0)
    }
}

#[derive(Debug)]
pub struct GridComplex {
    dims: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    incidence: [OnceLock<IncidenceMatrix>; 3],
}

impl Clone for GridComplex {
    fn clone(&self) -> Self {
        GridComplex {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            incidence: Default::default(),
        }
    }
}

impl PartialEq for GridComplex {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }
}

impl GridComplex {
    /// `dims` are vertex counts per axis.
    pub fn new(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "every axis needs at least 2 vertices, got {dims:?}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        Ok(GridComplex {
            dims,
            spacing,
            origin,
            incidence: Default::default(),
        })
    }

    /// Grid whose vertices sit at `center ± j·spacing` covering at least
    /// `half_extent` on every side of `center`.
    pub fn centered(center: [f64; 3], half_extent: [f64; 3], spacing: f64) -> Result<Self> {
        let mut dims = [0; 3];
        let mut origin = [0.0; 3];
        for a in 0..DIM {
            let half = (half_extent[a] / spacing).ceil().max(1.0) as usize;
            dims[a] = 2 * half + 1;
            origin[a] = center[a] - half as f64 * spacing;
        }
        Self::new(dims, spacing, origin)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Per-axis number of base positions for cells with the given mask.
    pub fn extents(&self, mask: u8) -> [usize; 3] {
        let mut e = self.dims;
        for (a, ea) in e.iter_mut().enumerate() {
            if mask & (1 << a) != 0 {
                *ea -= 1;
            }
        }
        e
    }

    fn block_len(&self, mask: u8) -> usize {
        self.extents(mask).iter().product()
    }

    pub fn num_cells(&self, k: usize) -> usize {
        assert!(k <= DIM, "degree {k} out of range");
        MASKS[k].iter().map(|&m| self.block_len(m)).sum()
    }

    pub fn cell_counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.num_cells(k))
    }

    pub fn num_vertices(&self) -> usize {
        self.num_cells(0)
    }

    fn block_offset(&self, mask: u8) -> usize {
        let k = mask.count_ones() as usize;
        MASKS[k]
            .iter()
            .take_while(|&&m| m != mask)
            .map(|&m| self.block_len(m))
            .sum()
    }

    fn linear(base: [usize; 3], ext: [usize; 3]) -> usize {
        base[0] + ext[0] * (base[1] + ext[1] * base[2])
    }

    fn delinear(mut idx: usize, ext: [usize; 3]) -> [usize; 3] {
        let x = idx % ext[0];
        idx /= ext[0];
        let y = idx % ext[1];
        [x, y, idx / ext[1]]
    }

    pub fn contains(&self, cell: CellId) -> bool {
        let e = self.extents(cell.axes);
        cell.axes < 8 && (0..DIM).all(|a| cell.base[a] < e[a])
    }

    pub fn index(&self, cell: CellId) -> usize {
        debug_assert!(self.contains(cell), "{cell:?} outside grid");
        self.block_offset(cell.axes) + Self::linear(cell.base, self.extents(cell.axes))
    }

    pub fn cell(&self, k: usize, mut idx: usize) -> CellId {
        for &m in MASKS[k] {
            let len = self.block_len(m);
            if idx < len {
                return CellId {
                    base: Self::delinear(idx, self.extents(m)),
                    axes: m,
                };
            }
            idx -= len;
        }
        panic!("cell index out of range for degree {k}");
    }

    pub fn vertex_index(&self, v: [usize; 3]) -> usize {
        Self::linear(v, self.dims)
    }

    pub fn vertex_position(&self, v: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + v[a] as f64 * self.spacing)
    }

    /// Center of a cell in ambient coordinates.
    pub fn cell_center(&self, cell: CellId) -> [f64; 3] {
        let mut p = self.vertex_position(cell.base);
        for a in cell.axis_list() {
            p[a] += 0.5 * self.spacing;
        }
        p
    }

    /// Vertex indices of a cell. Corner `b` (bit j set means "upper side along
    /// the j-th spanned axis") is at position `b` of the result.
    pub fn cell_vertices(&self, cell: CellId) -> Vec<usize> {
        let axes: Vec<usize> = cell.axis_list().collect();
        (0..1usize << axes.len())
            .map(|bits| {
                let mut v = cell.base;
                for (j, &a) in axes.iter().enumerate() {
                    if bits & (1 << j) != 0 {
                        v[a] += 1;
                    }
                }
                self.vertex_index(v)
            })
            .collect()
    }

    /// Primal 3-cells incident to `cell`, i.e. the vertices of its dual cell,
    /// ordered like [`cell_vertices`](Self::cell_vertices) over the axes the
    /// cell does not span. Entries are `None` where the grid boundary clips
    /// the dual cell.
    pub fn dual_cell_vertices(&self, cell: CellId) -> Vec<Option<usize>> {
        let free: Vec<usize> = (0..DIM).filter(|a| cell.axes & (1 << a) == 0).collect();
        let cube_ext = self.extents(0b111);
        (0..1usize << free.len())
            .map(|bits| {
                let mut b = cell.base;
                for (j, &a) in free.iter().enumerate() {
                    if bits & (1 << j) == 0 {
                        if b[a] == 0 {
                            return None;
                        }
                        b[a] -= 1;
                    }
                }
                if (0..DIM).any(|a| b[a] >= cube_ext[a]) {
                    return None;
                }
                Some(Self::linear(b, cube_ext))
            })
            .collect()
    }

    /// The dual grid: vertices at primal 3-cell centers.
    pub fn dual_grid(&self) -> Result<GridComplex> {
        let h = 0.5 * self.spacing;
        GridComplex::new(self.dims.map(|n| n - 1), self.spacing, self.origin.map(|o| o + h))
    }

    /// Dual (3−k)-cell of a primal k-cell as a cell of [`dual_grid`](Self::dual_grid),
    /// or `None` if the grid boundary clips it.
    pub fn dual_of(&self, cell: CellId) -> Option<CellId> {
        let mut base = cell.base;
        for a in 0..DIM {
            if cell.axes & (1 << a) == 0 {
                if base[a] == 0 || base[a] + 1 >= self.dims[a] {
                    return None;
                }
                base[a] -= 1;
            }
        }
        Some(CellId {
            base,
            axes: !cell.axes & 0b111,
        })
    }

    /// Inverse of [`dual_of`](Self::dual_of): maps a dual-grid cell back to
    /// the primal cell it is dual to.
    pub fn primal_of_dual(&self, dual: CellId) -> CellId {
        let mut base = dual.base;
        for (a, b) in base.iter_mut().enumerate() {
            if dual.axes & (1 << a) != 0 {
                *b += 1;
            }
        }
        CellId {
            base,
            axes: !dual.axes & 0b111,
        }
    }

    /// Grid-wide incidence matrix `D^I_k` (rows: (k+1)-cells, columns: k-cells).
    pub fn boundary_matrix(&self, k: usize) -> Result<&IncidenceMatrix> {
        if k > 2 {
            return Err(Error::InvalidArgument(format!("incidence degree {k} outside 0..=2")));
        }
        Ok(self.incidence[k].get_or_init(|| self.build_incidence(k)))
    }

    fn build_incidence(&self, k: usize) -> IncidenceMatrix {
        let nrows = self.num_cells(k + 1);
        let rows = (0..nrows).map(|r| {
            let cell = self.cell(k + 1, r);
            let mut row = Vec::with_capacity(2 * (k + 1));
            for (j, a) in cell.axis_list().enumerate() {
                let sign = if j % 2 == 0 { 1 } else { -1 };
                let axes = cell.axes & !(1 << a);
                let lower = CellId { base: cell.base, axes };
                let mut up = cell.base;
                up[a] += 1;
                let upper = CellId { base: up, axes };
                row.push((self.index(lower), -sign));
                row.push((self.index(upper), sign));
            }
            row.sort_by_key(|e| e.0);
            row
        });
        Csr::from_rows(nrows, self.num_cells(k), rows)
    }
}
