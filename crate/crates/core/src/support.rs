//! Normal and tangential supports of a sublevel set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::field::SampledField;
use crate::grid::DIM;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Normal,
    Tangential,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryCondition::Normal => "normal",
            BoundaryCondition::Tangential => "tangential",
        })
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "n" => Ok(BoundaryCondition::Normal),
            "tangential" | "t" => Ok(BoundaryCondition::Tangential),
            _ => Err(Error::InvalidArgument(format!("unknown boundary condition `{s}`"))),
        }
    }
}

const ABSENT: usize = usize::MAX;

/// Cells of one degree retained under a boundary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    bc: BoundaryCondition,
    degree: usize,
    members: Vec<usize>,
    local: Vec<usize>,
}

impl Support {
    /// Normal: a cell is kept iff one of its vertices is inside.
    /// Tangential: iff one vertex of its dual cell (a 3-cell center) is inside.
    pub fn compute(sampled: &SampledField, k: usize, bc: BoundaryCondition) -> Support {
        assert!(k <= DIM, "degree {k} out of range");
        let grid = sampled.grid();
        let n = grid.num_cells(k);
        let keep = |i: usize| {
            let cell = grid.cell(k, i);
            match bc {
                BoundaryCondition::Normal => grid.cell_vertices(cell).into_iter().any(|v| sampled.primal_inside(v)),
                BoundaryCondition::Tangential => grid
                    .dual_cell_vertices(cell)
                    .into_iter()
                    .flatten()
                    .any(|c| sampled.dual_inside(c)),
            }
        };
        Support::from_members(bc, k, n, (0..n).filter(|&i| keep(i)).collect())
    }

    /// `members` must be sorted and unique, each below `total`.
    pub fn from_members(bc: BoundaryCondition, degree: usize, total: usize, members: Vec<usize>) -> Support {
        let mut local = vec![ABSENT; total];
        for (j, &g) in members.iter().enumerate() {
            assert!(
                local[g] == ABSENT && (j == 0 || members[j - 1] < g),
                "members must be sorted and unique"
            );
            local[g] = j;
        }
        Support {
            bc,
            degree,
            members,
            local,
        }
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of grid cells of this degree.
    pub fn total(&self) -> usize {
        self.local.len()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, global: usize) -> bool {
        self.local[global] != ABSENT
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        let l = self.local[global];
        (l != ABSENT).then_some(l)
    }

    pub fn global_index(&self, local: usize) -> usize {
        self.members[local]
    }

    /// Global-to-local column map for [`Csr::restrict`].
    pub fn column_map(&self) -> Vec<Option<usize>> {
        self.local.iter().map(|&l| (l != ABSENT).then_some(l)).collect()
    }

    pub fn is_subset_of(&self, other: &Support) -> bool {
        self.total() == other.total() && self.members.iter().all(|&g| other.contains(g))
    }

    pub fn projection_matrix(&self) -> ProjectionMatrix {
        let rows = self.members.iter().map(|&g| vec![(g, 1)]);
        Csr::from_rows(self.len(), self.total(), rows)
    }
}

/// 0/1 row-selection matrix (support size × grid cell count).
pub type ProjectionMatrix = Csr<i32>;
