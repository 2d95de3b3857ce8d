//! Restricted differentials, Hodge stars and Laplacians of one sublevel set.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SampledField;
use crate::grid::{GridComplex, DIM};
use crate::sparse::{Csr, SparseMatrix};
use crate::star::{hodge_star, HodgeStar, DEFAULT_SUBSAMPLES};
use crate::support::{BoundaryCondition, Support};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKind {
    /// Hodge stars built from (fractional) cell volumes.
    Hodge,
    /// Boundary-induced graph Laplacian: every star is the identity.
    Big,
}

impl fmt::Display for LaplacianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LaplacianKind::Hodge => "hodge",
            LaplacianKind::Big => "big",
        })
    }
}

impl FromStr for LaplacianKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hodge" => Ok(LaplacianKind::Hodge),
            "big" => Ok(LaplacianKind::Big),
            _ => Err(Error::InvalidArgument(format!("unknown Laplacian kind `{s}`"))),
        }
    }
}

/// `P_{k+1} D^I_k P_kᵀ` without forming the projections.
pub fn restricted_differential(grid: &GridComplex, lower: &Support, upper: &Support) -> Result<Csr<i32>> {
    if lower.bc() != upper.bc() || upper.degree() != lower.degree() + 1 {
        return Err(Error::InvalidArgument(
            "supports must share a boundary condition and have consecutive degrees".into(),
        ));
    }
    let d = grid.boundary_matrix(lower.degree())?;
    Ok(d.restrict(upper.members(), &lower.column_map(), lower.len()))
}

/// Everything needed to assemble Laplacians of one sublevel set under one
/// boundary condition. Laplacians are assembled on first use and cached.
#[derive(Debug)]
pub struct OperatorSet {
    bc: BoundaryCondition,
    sampled: Arc<SampledField>,
    supports: [Support; 4],
    diffs: [Csr<i32>; 3],
    stars: Option<[HodgeStar; 4]>,
    laplacians: [[OnceLock<SparseMatrix>; 2]; 4],
    symmetrized: [OnceLock<SparseMatrix>; 4],
}

fn kind_slot(kind: LaplacianKind) -> usize {
    match kind {
        LaplacianKind::Hodge => 0,
        LaplacianKind::Big => 1,
    }
}

impl OperatorSet {
    /// Supports, differentials and Hodge stars for every degree.
    pub fn build(sampled: Arc<SampledField>, bc: BoundaryCondition) -> Result<Self> {
        Self::assemble(sampled, bc, Some(DEFAULT_SUBSAMPLES))
    }

    /// As [`build`](Self::build) with `s` sub-samples per axis for volume fractions.
    pub fn build_with_subsamples(sampled: Arc<SampledField>, bc: BoundaryCondition, s: usize) -> Result<Self> {
        Self::assemble(sampled, bc, Some(s))
    }

    /// Skips the Hodge stars; only BIG Laplacians are available.
    pub fn build_big_only(sampled: Arc<SampledField>, bc: BoundaryCondition) -> Result<Self> {
        Self::assemble(sampled, bc, None)
    }

    fn assemble(sampled: Arc<SampledField>, bc: BoundaryCondition, subsamples: Option<usize>) -> Result<Self> {
        let supports = [0, 1, 2, 3].map(|k| Support::compute(&sampled, k, bc));
        Self::from_supports(sampled, supports, subsamples)
    }

    pub(crate) fn from_supports(
        sampled: Arc<SampledField>,
        supports: [Support; 4],
        subsamples: Option<usize>,
    ) -> Result<Self> {
        let bc = supports[0].bc();
        let grid = sampled.grid().clone();
        let diffs = [
            restricted_differential(&grid, &supports[0], &supports[1])?,
            restricted_differential(&grid, &supports[1], &supports[2])?,
            restricted_differential(&grid, &supports[2], &supports[3])?,
        ];
        let stars = subsamples.map(|s| [0, 1, 2, 3].map(|k| hodge_star(&sampled, &supports[k], s)));
        Ok(OperatorSet {
            bc,
            sampled,
            supports,
            diffs,
            stars,
            laplacians: Default::default(),
            symmetrized: Default::default(),
        })
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn sampled(&self) -> &Arc<SampledField> {
        &self.sampled
    }

    pub fn grid(&self) -> &Arc<GridComplex> {
        self.sampled.grid()
    }

    pub fn support(&self, k: usize) -> &Support {
        &self.supports[k]
    }

    pub fn supports(&self) -> &[Support; 4] {
        &self.supports
    }

    /// Support sizes per degree.
    pub fn dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.supports[k].len())
    }

    /// Restricted differential `D_k` (k-forms to (k+1)-forms), `0 ≤ k ≤ 2`.
    pub fn differential(&self, k: usize) -> Result<&Csr<i32>> {
        self.diffs
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("differential degree {k} outside 0..=2")))
    }

    pub fn has_stars(&self) -> bool {
        self.stars.is_some()
    }

    pub fn star(&self, k: usize) -> Result<&HodgeStar> {
        check_degree(k)?;
        self.stars
            .as_ref()
            .map(|s| &s[k])
            .ok_or_else(|| Error::InvalidState("operator set was built without Hodge stars".into()))
    }

    /// Star diagonal for `kind` (all ones for BIG).
    pub fn metric(&self, k: usize, kind: LaplacianKind) -> Result<Vec<f64>> {
        match kind {
            LaplacianKind::Hodge => Ok(self.star(k)?.diagonal.clone()),
            LaplacianKind::Big => {
                check_degree(k)?;
                Ok(vec![1.0; self.supports[k].len()])
            }
        }
    }

    /// Hodge: `D_kᵀ S_{k+1} D_k + S_k D_{k−1} S_{k−1}⁻¹ D_{k−1}ᵀ S_k`.
    /// BIG: `D_kᵀ D_k + D_{k−1} D_{k−1}ᵀ`.
    pub fn laplacian(&self, k: usize, kind: LaplacianKind) -> Result<&SparseMatrix> {
        check_degree(k)?;
        if kind == LaplacianKind::Hodge {
            self.star(k)?;
        }
        let slot = &self.laplacians[k][kind_slot(kind)];
        if let Some(m) = slot.get() {
            return Ok(m);
        }
        let m = self.assemble_laplacian(k, kind)?;
        Ok(slot.get_or_init(|| m))
    }

    fn assemble_laplacian(&self, k: usize, kind: LaplacianKind) -> Result<SparseMatrix> {
        let n = self.supports[k].len();
        let mut out = SparseMatrix::zeros(n, n);
        let star = |j: usize| -> Result<Option<&[f64]>> {
            Ok(match kind {
                LaplacianKind::Hodge => Some(self.star(j)?.diagonal.as_slice()),
                LaplacianKind::Big => None,
            })
        };
        if k < DIM {
            let d = self.diffs[k].to_f64();
            let up = d.transpose().matmul(&d.scale(star(k + 1)?, None));
            out = out.add(&up);
        }
        if k > 0 {
            let d = self.diffs[k - 1].to_f64();
            let inv = star(k - 1)?.map(|s| s.iter().map(|x| 1.0 / x).collect::<Vec<_>>());
            let sk = star(k)?;
            let left = d.scale(sk, None);
            let right = d.transpose().scale(inv.as_deref(), sk);
            out = out.add(&left.matmul(&right));
        }
        Ok(out)
    }

    /// `D̄_k = S_{k+1}^{1/2} D_k S_k^{−1/2}` (plain `D_k` for BIG).
    pub fn symmetrized_differential(&self, k: usize, kind: LaplacianKind) -> Result<SparseMatrix> {
        let d = self.differential(k)?.to_f64();
        match kind {
            LaplacianKind::Big => Ok(d),
            LaplacianKind::Hodge => {
                let up: Vec<f64> = self.star(k + 1)?.diagonal.iter().map(|s| s.sqrt()).collect();
                let dn: Vec<f64> = self.star(k)?.diagonal.iter().map(|s| 1.0 / s.sqrt()).collect();
                Ok(d.scale(Some(&up), Some(&dn)))
            }
        }
    }

    /// `L̄_k = D̄_kᵀ D̄_k + D̄_{k−1} D̄_{k−1}ᵀ` with Hodge stars; its spectrum is
    /// the generalized spectrum of `(L_k, S_k)`.
    pub fn symmetrized_laplacian(&self, k: usize) -> Result<&SparseMatrix> {
        check_degree(k)?;
        self.star(k)?;
        let slot = &self.symmetrized[k];
        if let Some(m) = slot.get() {
            return Ok(m);
        }
        let m = self.weighted_laplacian(k, LaplacianKind::Hodge, 1.0, 1.0)?;
        Ok(slot.get_or_init(|| m))
    }

    /// Symmetric matrix whose ordinary spectrum is the spectrum of the
    /// Laplacian of `kind`: `L̄_k` for Hodge, `L^B_k` for BIG.
    pub fn spectral_matrix(&self, k: usize, kind: LaplacianKind) -> Result<&SparseMatrix> {
        match kind {
            LaplacianKind::Hodge => self.symmetrized_laplacian(k),
            LaplacianKind::Big => self.laplacian(k, kind),
        }
    }

    /// `α_up·D̄_kᵀD̄_k + α_down·D̄_{k−1}D̄_{k−1}ᵀ`; same kernel as the
    /// unweighted Laplacian for positive weights.
    pub fn weighted_laplacian(
        &self,
        k: usize,
        kind: LaplacianKind,
        alpha_up: f64,
        alpha_down: f64,
    ) -> Result<SparseMatrix> {
        check_degree(k)?;
        let n = self.supports[k].len();
        let mut out = SparseMatrix::zeros(n, n);
        if k < DIM {
            let d = self.symmetrized_differential(k, kind)?;
            out = out.add(&d.transpose().matmul(&d).scaled(alpha_up));
        }
        if k > 0 {
            let d = self.symmetrized_differential(k - 1, kind)?;
            out = out.add(&d.matmul(&d.transpose()).scaled(alpha_down));
        }
        Ok(out)
    }
}

fn check_degree(k: usize) -> Result<()> {
    if k > DIM {
        Err(Error::InvalidArgument(format!("degree {k} outside 0..=3")))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_on_grid, ScalarField};

    fn ball_ops(n: usize, bc: BoundaryCondition) -> OperatorSet {
        let l = 2.0 / (n as f64 - 1.0) * 1.4;
        let grid = Arc::new(GridComplex::centered([0.0; 3], [1.4; 3], l).unwrap());
        let f = ScalarField::sphere([0.03, -0.02, 0.01], 1.0).unwrap();
        OperatorSet::build(Arc::new(sample_on_grid(&f, grid, 0.0)), bc).unwrap()
    }

    #[test]
    fn big_vertex_laplacian_is_graph_laplacian() {
        let grid = Arc::new(GridComplex::new([5, 5, 5], 1.0, [-2.0; 3]).unwrap());
        let f = ScalarField::sphere([0.0; 3], 10.0).unwrap();
        let ops = OperatorSet::build(
            Arc::new(sample_on_grid(&f, grid.clone(), 0.0)),
            BoundaryCondition::Normal,
        )
        .unwrap();
        let l0 = ops.laplacian(0, LaplacianKind::Big).unwrap();
        let v = grid.vertex_index([2, 2, 2]);
        assert_eq!(l0.get(v, v), 6.0);
        let (cols, vals) = l0.row(v);
        assert_eq!(cols.len(), 7);
        for (&c, &x) in cols.iter().zip(vals) {
            if c != v {
                assert_eq!(x, -1.0);
            }
        }
    }

    #[test]
    fn isolated_cell_big_laplacian() {
        let grid = Arc::new(GridComplex::new([2, 2, 2], 1.0, [0.0; 3]).unwrap());
        let f = ScalarField::sphere([0.5; 3], 10.0).unwrap();
        let ops = OperatorSet::build(Arc::new(sample_on_grid(&f, grid, 0.0)), BoundaryCondition::Normal).unwrap();
        let l3 = ops.laplacian(3, LaplacianKind::Big).unwrap();
        assert_eq!(l3.shape(), (1, 1));
        assert_eq!(l3.get(0, 0), 6.0);
    }

    #[test]
    fn restricted_nilpotency_and_symmetry() {
        for bc in [BoundaryCondition::Normal, BoundaryCondition::Tangential] {
            let ops = ball_ops(9, bc);
            for k in 0..2 {
                let p = ops.differential(k + 1).unwrap().matmul(ops.differential(k).unwrap());
                assert_eq!(p.nnz(), 0);
            }
            for k in 0..=3 {
                for kind in [LaplacianKind::Hodge, LaplacianKind::Big] {
                    let l = ops.laplacian(k, kind).unwrap();
                    assert!(l.asymmetry() <= 1e-12 * l.max_abs().max(1.0));
                }
                let lb = ops.symmetrized_laplacian(k).unwrap();
                assert!(lb.asymmetry() <= 1e-12 * lb.max_abs().max(1.0));
            }
            for k in 1..3 {
                let a = ops.symmetrized_differential(k, LaplacianKind::Hodge).unwrap();
                let b = ops.symmetrized_differential(k - 1, LaplacianKind::Hodge).unwrap();
                let p = a.matmul(&b);
                assert!(p.max_abs() <= 1e-12 * a.max_abs() * b.max_abs());
            }
        }
    }

    #[test]
    fn missing_star_is_invalid_state() {
        let grid = Arc::new(GridComplex::new([4, 4, 4], 1.0, [0.0; 3]).unwrap());
        let f = ScalarField::sphere([1.5; 3], 1.0).unwrap();
        let ops =
            OperatorSet::build_big_only(Arc::new(sample_on_grid(&f, grid, 0.0)), BoundaryCondition::Normal).unwrap();
        assert!(matches!(
            ops.laplacian(1, LaplacianKind::Hodge),
            Err(Error::InvalidState(_))
        ));
        assert!(ops.laplacian(1, LaplacianKind::Big).is_ok());
    }
}
