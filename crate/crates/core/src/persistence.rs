//! Filtrations of sublevel sets, harmonic extension between levels and
//! persistent Laplacians.
//!
//! Every level uses the normal boundary condition, so supports grow with the
//! isovalue and `K_l ⊆ K_{l+p}` degree by degree. A `k`-form on `K_l` is
//! carried to `K_{l+p}` by keeping its flux on the old cells and filling the
//! band `K_{l+p} ∖ K_l` with the exact form `dζ` whose potential `ζ` lives on
//! the new `(k−1)`-cells and makes the result coclosed there.

use std::io::Write;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{nested_dissection, smallest_eigenpairs, ShiftedCholesky, SolverOptions};
use crate::error::{Error, Result};
use crate::field::{RawSamples, ScalarField};
use crate::grid::{GridComplex, DIM};
use crate::laplacian::{LaplacianKind, OperatorSet};
use crate::sparse::SparseMatrix;
use crate::spectrum::{level_summary, spectrum, support_coordinates, LevelSummary, Spectrum, SpectrumSummary};
use crate::support::BoundaryCondition;

/// Band systems whose matrix has at most this many entries are solved by a
/// dense SVD; larger ones by a gauge-fixed sparse Cholesky factorization.
pub const DENSE_BAND_ENTRIES: usize = 2500 * 2500;

/// Relative singular value cutoff of the dense minimum-norm solve.
const PINV_RTOL: f64 = 1e-10;

/// Nested normal-condition complexes at ascending isovalues of one field.
#[derive(Debug)]
pub struct Filtration {
    field: Option<ScalarField>,
    isovalues: Vec<f64>,
    levels: Vec<OperatorSet>,
}

/// Filtration of `field` sampled on `grid`, with Hodge stars at every level.
pub fn build_filtration(field: &ScalarField, grid: Arc<GridComplex>, isovalues: &[f64]) -> Result<Filtration> {
    let samples = RawSamples::evaluate(field, grid);
    let mut f = Filtration::from_samples(&samples, isovalues, true)?;
    f.field = Some(field.clone());
    Ok(f)
}

impl Filtration {
    /// Levels from pre-evaluated samples. Without `stars` only BIG operators
    /// are available.
    pub fn from_samples(samples: &RawSamples, isovalues: &[f64], stars: bool) -> Result<Filtration> {
        if isovalues.is_empty() {
            return Err(Error::InvalidArgument(
                "a filtration needs at least one isovalue".into(),
            ));
        }
        if let Some(w) = isovalues.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(format!(
                "isovalues must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
        if isovalues.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("isovalues must be finite".into()));
        }
        let levels: Vec<OperatorSet> = isovalues
            .par_iter()
            .map(|&c| {
                let sampled = Arc::new(samples.at_isovalue(c));
                if stars {
                    OperatorSet::build(sampled, BoundaryCondition::Normal)
                } else {
                    OperatorSet::build_big_only(sampled, BoundaryCondition::Normal)
                }
            })
            .collect::<Result<_>>()?;
        for l in 1..levels.len() {
            for k in 0..=DIM {
                if !levels[l - 1].support(k).is_subset_of(levels[l].support(k)) {
                    return Err(Error::Internal(format!(
                        "degree-{k} support at level {} is not contained in level {l}",
                        l - 1
                    )));
                }
            }
        }
        Ok(Filtration {
            field: None,
            isovalues: isovalues.to_vec(),
            levels,
        })
    }

    pub fn field(&self) -> Option<&ScalarField> {
        self.field.as_ref()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn isovalues(&self) -> &[f64] {
        &self.isovalues
    }

    pub fn level(&self, l: usize) -> &OperatorSet {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[OperatorSet] {
        &self.levels
    }

    fn check_pair(&self, l: usize, p: usize) -> Result<()> {
        if l.checked_add(p).is_none_or(|e| e >= self.levels.len()) {
            return Err(Error::InvalidArgument(format!(
                "pair (l={l}, p={p}) outside a filtration of {} levels",
                self.levels.len()
            )));
        }
        Ok(())
    }
}

/// `I_{l,p}`: k-forms on `K_l` to k-forms on `K_{l+p}`.
#[derive(Debug, Clone)]
pub struct ExtensionOperator {
    pub l: usize,
    pub p: usize,
    pub k: usize,
    pub kind: LaplacianKind,
    /// `n_{l+p} × n_l`.
    pub matrix: SparseMatrix,
    /// Row of each level-`l` cell in the level-`l+p` support.
    pub old_rows: Vec<usize>,
    /// Rows of cells in `K_{l+p} ∖ K_l`.
    pub band_rows: Vec<usize>,
    /// Scale of each old row, `S^l_σ / S^{l+p}_σ`; it keeps `⋆ω` unchanged on
    /// cells whose cut volume grows.
    pub ratios: Vec<f64>,
}

impl ExtensionOperator {
    pub fn apply(&self, omega: &[f64]) -> Vec<f64> {
        self.matrix.apply(omega)
    }
}

/// Values of an extension on the band: entry `(b, c)` belongs to band row
/// `b` and level-`l` column `cols[c]`; other columns vanish on the band.
#[derive(Debug, Clone)]
struct BandBlock {
    cols: Vec<usize>,
    values: Mat<f64>,
}

impl BandBlock {
    fn empty(rows: usize) -> Self {
        BandBlock {
            cols: vec![],
            values: Mat::zeros(rows, 0),
        }
    }
}

fn nonzero_columns(m: &SparseMatrix) -> Vec<usize> {
    let mut seen = vec![false; m.ncols()];
    for (_, j, v) in m.triplets() {
        if v != 0.0 {
            seen[j] = true;
        }
    }
    (0..m.ncols()).filter(|&j| seen[j]).collect()
}

fn dense_columns(m: &SparseMatrix, cols: &[usize], scale: f64) -> Mat<f64> {
    let mut slot = vec![usize::MAX; m.ncols()];
    for (c, &j) in cols.iter().enumerate() {
        slot[j] = c;
    }
    let mut out = Mat::zeros(m.nrows(), cols.len());
    for (i, j, v) in m.triplets() {
        if slot[j] != usize::MAX {
            out[(i, slot[j])] += scale * v;
        }
    }
    out
}

/// Sparse times dense.
fn sparse_dense(a: &SparseMatrix, x: &Mat<f64>) -> Mat<f64> {
    assert_eq!(a.ncols(), x.nrows());
    let cols: Vec<Vec<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|c| a.apply(x.col_as_slice(c)))
        .collect();
    let mut out = Mat::zeros(a.nrows(), x.ncols());
    for (c, col) in cols.iter().enumerate() {
        out.col_as_slice_mut(c).copy_from_slice(col);
    }
    out
}

/// `m ← m − k kᵀ m` for orthonormal columns `k`.
fn project_off(m: &mut Mat<f64>, k: &Mat<f64>) {
    if k.ncols() == 0 {
        return;
    }
    let c = k.transpose() * m.as_ref();
    let u = k * &c;
    for j in 0..m.ncols() {
        for (a, b) in m.col_as_slice_mut(j).iter_mut().zip(u.col_as_slice(j)) {
            *a -= b;
        }
    }
}

fn column_norms(m: &Mat<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| m.col_as_slice(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// `a⁺ b` by a dense SVD.
fn pinv_apply(a: &SparseMatrix, b: &Mat<f64>) -> Result<Mat<f64>> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return Ok(Mat::zeros(n, b.ncols()));
    }
    let svd = a.to_dense().thin_svd().map_err(|e| Error::SolverFailure {
        message: format!("band SVD failed: {e:?}"),
        iterations: 0,
        converged: 0,
        wanted: n,
    })?;
    let s = svd.S().column_vector();
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    // V Σ⁺ Uᵀ b
    let mut t = svd.U().transpose() * b;
    for i in 0..s.nrows() {
        let inv = if s[i] > PINV_RTOL * smax { 1.0 / s[i] } else { 0.0 };
        for c in 0..t.ncols() {
            t[(i, c)] *= inv;
        }
    }
    Ok(svd.V() * &t)
}

/// Minimum-norm solution of `h x = rhs` for a sparse PSD `h`: the kernel is
/// found by the eigensolver and projected off the right-hand side, then a
/// slightly shifted Cholesky factor is refined on the range.
fn psd_min_norm_solve(h: &SparseMatrix, mut rhs: Mat<f64>, coords: &[[f64; 3]]) -> Result<Mat<f64>> {
    let opts = SolverOptions::default();
    let eig = smallest_eigenpairs(h, 0, Some(coords), &opts, true)?;
    let kernel = eig
        .vectors
        .map(|v| v.subcols(0, eig.kernel_dim).to_owned())
        .unwrap_or_else(|| Mat::zeros(h.nrows(), 0));
    project_off(&mut rhs, &kernel);
    let norms = column_norms(&rhs);
    let g = h.gershgorin_bound().max(1.0);
    let ordering = nested_dissection(coords, h);
    let mut shift = 1e-10 * g;
    let fact = loop {
        match ShiftedCholesky::new(h, shift, Some(&ordering)) {
            Ok(c) => break c,
            Err(_) if shift < 1e-4 * g => shift *= 100.0,
            Err(e) => return Err(e),
        }
    };
    let mut x = rhs.clone();
    fact.solve_in_place(&mut x);
    project_off(&mut x, &kernel);
    let mut last = f64::INFINITY;
    for it in 0..REFINE_STEPS {
        let hx = sparse_dense(h, &x);
        let mut r = &rhs - &hx;
        project_off(&mut r, &kernel);
        let rel = column_norms(&r)
            .iter()
            .zip(&norms)
            .filter(|(_, &b)| b > 0.0)
            .map(|(&a, &b)| a / b)
            .fold(0.0, f64::max);
        let stalled = rel > 0.5 * last;
        if rel <= REFINE_RTOL || (stalled && rel <= REFINE_ACCEPT) {
            return Ok(x);
        }
        if stalled && it > 3 {
            return Err(Error::SolverFailure {
                message: format!("band solve stalled at relative residual {rel:.3e}"),
                iterations: it,
                converged: 0,
                wanted: rhs.ncols(),
            });
        }
        last = rel;
        fact.solve_in_place(&mut r);
        project_off(&mut r, &kernel);
        x += &r;
    }
    Err(Error::SolverFailure {
        message: format!("band solve did not reach relative residual {REFINE_RTOL:e}"),
        iterations: REFINE_STEPS,
        converged: 0,
        wanted: rhs.ncols(),
    })
}

const REFINE_STEPS: usize = 60;
const REFINE_RTOL: f64 = 1e-12;
const REFINE_ACCEPT: f64 = 1e-9;

/// Everything the extension determines, before the matrix is assembled.
struct ExtensionData {
    old_rows: Vec<usize>,
    band_rows: Vec<usize>,
    ratios: Vec<f64>,
    band: BandBlock,
    n_hi: usize,
    n_lo: usize,
}

impl ExtensionData {
    fn into_operator(self, l: usize, p: usize, k: usize, kind: LaplacianKind) -> ExtensionOperator {
        let mut trip: Vec<(usize, usize, f64)> = self
            .old_rows
            .iter()
            .enumerate()
            .map(|(i, &j)| (j, i, self.ratios[i]))
            .collect();
        for (b, &row) in self.band_rows.iter().enumerate() {
            for (c, &col) in self.band.cols.iter().enumerate() {
                let v = self.band.values[(b, c)];
                if v != 0.0 {
                    trip.push((row, col, v));
                }
            }
        }
        ExtensionOperator {
            l,
            p,
            k,
            kind,
            matrix: SparseMatrix::from_triplets(self.n_hi, self.n_lo, &trip),
            old_rows: self.old_rows,
            band_rows: self.band_rows,
            ratios: self.ratios,
        }
    }
}

fn cell_centers(ops: &OperatorSet, k: usize, locals: &[usize]) -> Vec<[f64; 3]> {
    let grid = ops.grid();
    let s = ops.support(k);
    locals
        .iter()
        .map(|&j| grid.cell_center(grid.cell(k, s.global_index(j))))
        .collect()
}

/// Locals of the degree-`k` support at `hi` that are absent at `lo`, with
/// the map from `hi` locals to their position in that list.
fn new_cells(lo: &OperatorSet, hi: &OperatorSet, k: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let (src, dst) = (lo.support(k), hi.support(k));
    let mut map = vec![None; dst.len()];
    let mut list = Vec::new();
    for (j, slot) in map.iter_mut().enumerate() {
        if !src.contains(dst.global_index(j)) {
            *slot = Some(list.len());
            list.push(j);
        }
    }
    (list, map)
}

fn extension_data(
    f: &Filtration,
    l: usize,
    p: usize,
    k: usize,
    kind: LaplacianKind,
    dense_entries: usize,
) -> Result<ExtensionData> {
    f.check_pair(l, p)?;
    if k > DIM {
        return Err(Error::InvalidArgument(format!("degree {k} outside 0..=3")));
    }
    let (lo, hi) = (f.level(l), f.level(l + p));
    let (src, dst) = (lo.support(k), hi.support(k));
    let s_lo = lo.metric(k, kind)?;
    let s_hi = hi.metric(k, kind)?;
    let old_rows: Vec<usize> = src
        .members()
        .iter()
        .map(|&g| {
            dst.local_index(g)
                .ok_or_else(|| Error::Internal(format!("degree-{k} cell {g} lost between levels {l} and {}", l + p)))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = old_rows.iter().enumerate().map(|(i, &j)| s_lo[i] / s_hi[j]).collect();
    let (band_rows, band_map) = new_cells(lo, hi, k);
    let band = if band_rows.is_empty() {
        BandBlock::empty(0)
    } else if k == 0 {
        scalar_band(
            hi,
            &band_rows,
            &band_map,
            &old_rows,
            &ratios,
            src.len(),
            kind,
            dense_entries,
        )?
    } else {
        potential_band(lo, hi, k, &band_rows, &old_rows, &s_lo, &s_hi, dense_entries)?
    };
    Ok(ExtensionData {
        old_rows,
        band_rows,
        ratios,
        band,
        n_hi: dst.len(),
        n_lo: src.len(),
    })
}

/// Harmonic values on new vertices: minimise `Σ_e S_e (du)_e²` over the edges
/// of `K_{l+p}` with old vertices fixed to the rescaled input.
fn scalar_band(
    hi: &OperatorSet,
    band_rows: &[usize],
    band_map: &[Option<usize>],
    old_rows: &[usize],
    ratios: &[f64],
    n_lo: usize,
    kind: LaplacianKind,
    dense_entries: usize,
) -> Result<BandBlock> {
    let w: Vec<f64> = hi.metric(1, kind)?.iter().map(|s| s.sqrt()).collect();
    let d = hi.differential(0)?.to_f64().scale(Some(&w), None);
    let touching: Vec<usize> = (0..d.nrows())
        .filter(|&e| d.row(e).0.iter().any(|&v| band_map[v].is_some()))
        .collect();
    let g = d.restrict(&touching, band_map, band_rows.len());
    let mut old_map = vec![None; band_map.len()];
    for (i, &j) in old_rows.iter().enumerate() {
        old_map[j] = Some(i);
    }
    let r = d.restrict(&touching, &old_map, n_lo).scale(None, Some(ratios));
    let cols = nonzero_columns(&r);
    if cols.is_empty() {
        return Ok(BandBlock::empty(band_rows.len()));
    }
    let rhs = dense_columns(&r, &cols, -1.0);
    let values = if g.nrows() * g.ncols() <= dense_entries {
        pinv_apply(&g, &rhs)?
    } else {
        let gt = g.transpose();
        let h = gt.matmul(&g);
        psd_min_norm_solve(&h, sparse_dense(&gt, &rhs), &cell_centers(hi, 0, band_rows))?
    };
    Ok(BandBlock { cols, values })
}

/// Band values `D̃ζ` for the potential `ζ` on new `(k−1)`-cells solving
/// `D̃ᵀ S_B D̃ ζ = −D_Aᵀ S^l ω` in the least-squares sense.
fn potential_band(
    lo: &OperatorSet,
    hi: &OperatorSet,
    k: usize,
    band_rows: &[usize],
    old_rows: &[usize],
    s_lo: &[f64],
    s_hi: &[f64],
    dense_entries: usize,
) -> Result<BandBlock> {
    let (zlist, zmap) = new_cells(lo, hi, k - 1);
    let nz = zlist.len();
    let d = hi.differential(k - 1)?.to_f64();
    let dt = d.restrict(band_rows, &zmap, nz);
    let r = d.restrict(old_rows, &zmap, nz).scale(Some(s_lo), None).transpose();
    let cols = nonzero_columns(&r);
    if cols.is_empty() {
        return Ok(BandBlock::empty(band_rows.len()));
    }
    let rhs = dense_columns(&r, &cols, -1.0);
    let s_b: Vec<f64> = band_rows.iter().map(|&j| s_hi[j]).collect();
    let values = if dt.nrows() * nz <= dense_entries {
        let root: Vec<f64> = s_b.iter().map(|s| s.sqrt()).collect();
        let gt = dt.scale(Some(&root), None).transpose();
        let mut y = pinv_apply(&gt, &rhs)?;
        for (b, r) in root.iter().enumerate() {
            for c in 0..y.ncols() {
                y[(b, c)] /= r;
            }
        }
        y
    } else {
        // Potentials differing by dφ give the same band form; a gauge term on
        // the new (k−2)-cells leaves only a small kernel to project off.
        let mut h = dt.transpose().matmul(&dt.scale(Some(&s_b), None));
        if k >= 2 {
            let (_, gmap) = new_cells(lo, hi, k - 2);
            let ng = gmap.iter().flatten().count();
            let dp = hi.differential(k - 2)?.to_f64().restrict(&zlist, &gmap, ng);
            let gamma = s_b.iter().sum::<f64>() / s_b.len() as f64;
            h = h.add(&dp.matmul(&dp.transpose()).scaled(gamma));
        }
        let zeta = psd_min_norm_solve(&h, rhs, &cell_centers(hi, k - 1, &zlist))?;
        sparse_dense(&dt, &zeta)
    };
    Ok(BandBlock { cols, values })
}

/// The harmonic extension operator of degree `k` from level `l` to `l + p`.
///
/// Old rows carry `S^l_σ / S^{l+p}_σ · ω_σ`. For `k ≥ 1` the band values are
/// `dζ` with `ζ` on the new `(k−1)`-cells solving `D̃ᵀ S D̃ ζ = −D_Aᵀ S^l ω`,
/// where `D̃` couples band `k`-cells to new `(k−1)`-cells and `D_A` couples
/// old `k`-cells to them. For `k = 0` the band holds the discrete harmonic
/// function on the new vertices that matches the old values and vanishes
/// outside `K_{l+p}`. Both systems are solved in the minimum-norm
/// least-squares sense.
pub fn extension_operator(
    f: &Filtration,
    l: usize,
    p: usize,
    k: usize,
    kind: LaplacianKind,
) -> Result<ExtensionOperator> {
    Ok(extension_data(f, l, p, k, kind, DENSE_BAND_ENTRIES)?.into_operator(l, p, k, kind))
}

/// Persistent operators of one `(l, p, k)` and one Laplacian kind.
#[derive(Debug, Clone)]
pub struct PersistentPair {
    pub l: usize,
    pub p: usize,
    pub k: usize,
    pub kind: LaplacianKind,
    pub extension: ExtensionOperator,
    /// `δ^k_{l,p} = δ^k_{l+p} I_{l,p}`, from `K_l` k-forms to `K_{l+p}`
    /// (k−1)-forms; absent for `k = 0`.
    pub codifferential: Option<SparseMatrix>,
    /// `D^{k−1}_{l,p} = S_l⁻¹ Iᵀ S D^{k−1}_{l+p}`, the adjoint of the
    /// codifferential; absent for `k = 0`.
    pub differential: Option<SparseMatrix>,
    /// `S_l (D_{l,p} δ_{l,p} + δ_l D_l)`, symmetric; with the BIG kind every
    /// star is the identity. At `p = 0` this is the level-`l` Laplacian.
    pub laplacian: SparseMatrix,
    /// Symmetric matrix with the spectrum of the persistent Laplacian.
    pub spectral: SparseMatrix,
    /// Level-`l` star of degree `k` (the inner product on the domain).
    pub metric: Vec<f64>,
    /// Gershgorin bound of the level-`l` spectral matrix, the scale below
    /// which eigenvalues count as zero.
    pub zero_scale: f64,
}

impl PersistentPair {
    pub fn spectrum(&self, f: &Filtration, want_nonzero: usize, opts: &SolverOptions) -> Result<Spectrum> {
        let coords = support_coordinates(f.level(self.l), self.k);
        let opts = SolverOptions {
            zero_scale: Some(self.zero_scale),
            ..opts.clone()
        };
        spectrum(&self.spectral, want_nonzero, None, Some(&coords), &opts)
    }
}

fn inv(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / x).collect()
}

fn inv_sqrt(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / x.sqrt()).collect()
}

fn with_dense_block(m: &SparseMatrix, rows: &[usize], cols: &[usize], block: &Mat<f64>) -> SparseMatrix {
    let mut trip = Vec::new();
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let v = block[(a, b)];
            if v != 0.0 {
                trip.push((i, j, v));
            }
        }
    }
    m.add(&SparseMatrix::from_triplets(m.nrows(), m.ncols(), &trip))
}

/// Persistent codifferential, its adjoint and the persistent Laplacian.
///
/// `N = D_{l+p}ᵀ S_{l+p} I_{l,p}` splits into the fluxes of old cells,
/// `D_lᵀ S_l` padded to the `(k−1)`-cells of `K_{l+p}`, and a dense block on
/// the new `(k−1)`-cells that bound band cells. Then `δ_{l,p} = S⁻¹N`,
/// `D_{l,p} = S_l⁻¹Nᵀ` and the down part of the Laplacian is `NᵀS⁻¹N`.
pub fn persistent_operators(
    f: &Filtration,
    l: usize,
    p: usize,
    k: usize,
    kind: LaplacianKind,
) -> Result<PersistentPair> {
    let data = extension_data(f, l, p, k, kind, DENSE_BAND_ENTRIES)?;
    let (lo, hi) = (f.level(l), f.level(l + p));
    let n = lo.support(k).len();
    let metric = lo.metric(k, kind)?;
    let zero_scale = lo.spectral_matrix(k, kind)?.gershgorin_bound();
    let mut laplacian = SparseMatrix::zeros(n, n);
    let mut spectral = SparseMatrix::zeros(n, n);
    if k < DIM {
        let d = lo.differential(k)?.to_f64();
        let s_up = lo.metric(k + 1, kind)?;
        laplacian = laplacian.add(&d.transpose().matmul(&d.scale(Some(&s_up), None)));
        let db = lo.symmetrized_differential(k, kind)?;
        spectral = spectral.add(&db.transpose().matmul(&db));
    }
    let (mut codifferential, mut differential) = (None, None);
    if k > 0 {
        let d = hi.differential(k - 1)?.to_f64();
        let s_k = hi.metric(k, kind)?;
        let s_km = hi.metric(k - 1, kind)?;
        let n_km = s_km.len();
        if d.nrows() != data.n_hi {
            return Err(Error::Internal(
                "extension and level differential disagree in size".into(),
            ));
        }
        let all: Vec<Option<usize>> = (0..n_km).map(Some).collect();
        let flux = d
            .restrict(&data.old_rows, &all, n_km)
            .transpose()
            .scale(None, Some(&metric));
        let s_b: Vec<f64> = data.band_rows.iter().map(|&j| s_k[j]).collect();
        let db = d
            .restrict(&data.band_rows, &all, n_km)
            .transpose()
            .scale(None, Some(&s_b));
        let zrows: Vec<usize> = (0..n_km).filter(|&z| db.row_nnz(z) > 0).collect();
        let mut is_z = vec![false; n_km];
        for &z in &zrows {
            is_z[z] = true;
        }
        let plain: Vec<usize> = (0..n_km).filter(|&z| !is_z[z]).collect();
        let flux_plain = flux.restrict(&plain, &all_cols(n), n);
        let s_plain: Vec<f64> = plain.iter().map(|&z| s_km[z]).collect();
        let s_z: Vec<f64> = zrows.iter().map(|&z| s_km[z]).collect();
        let cols = &data.band.cols;
        // Dense rows of N on the new faces of band cells.
        let mut nz = sparse_dense(
            &db.restrict(&zrows, &all_cols(data.band_rows.len()), data.band_rows.len()),
            &data.band.values,
        );
        let fz = dense_columns(&flux.restrict(&zrows, &all_cols(n), n), cols, 1.0);
        nz += &fz;

        let trip: Vec<(usize, usize, f64)> = flux_plain.triplets().map(|(a, j, v)| (plain[a], j, v)).collect();
        let mut nmat = SparseMatrix::from_triplets(n_km, n, &trip);
        nmat = with_dense_block(&nmat, &zrows, cols, &nz);
        let s_km_inv = inv(&s_km);
        codifferential = Some(nmat.scale(Some(&s_km_inv), None));
        differential = Some(nmat.transpose().scale(Some(&inv(&metric)), None));

        laplacian = laplacian.add(
            &flux_plain
                .transpose()
                .matmul(&flux_plain.scale(Some(&inv(&s_plain)), None)),
        );
        let sqrt_metric: Vec<f64> = metric.iter().map(|s| s.sqrt()).collect();
        let mp = d
            .restrict(&data.old_rows, &all, n_km)
            .transpose()
            .restrict(&plain, &all_cols(n), n)
            .scale(Some(&inv_sqrt(&s_plain)), Some(&sqrt_metric));
        spectral = spectral.add(&mp.transpose().matmul(&mp));
        if !zrows.is_empty() && !cols.is_empty() {
            let mut w = nz.clone();
            for (a, s) in s_z.iter().enumerate() {
                for c in 0..w.ncols() {
                    w[(a, c)] /= s;
                }
            }
            let gram = nz.transpose() * &w;
            laplacian = with_dense_block(&laplacian, cols, cols, &gram);
            let mut m = nz;
            let cs: Vec<f64> = cols.iter().map(|&j| 1.0 / metric[j].sqrt()).collect();
            for (a, s) in s_z.iter().enumerate() {
                let rs = 1.0 / s.sqrt();
                for (c, cv) in cs.iter().enumerate() {
                    m[(a, c)] *= rs * cv;
                }
            }
            let gram = m.transpose() * &m;
            spectral = with_dense_block(&spectral, cols, cols, &gram);
        }
    }
    Ok(PersistentPair {
        l,
        p,
        k,
        kind,
        extension: data.into_operator(l, p, k, kind),
        codifferential,
        differential,
        laplacian,
        spectral,
        metric,
        zero_scale,
    })
}

fn all_cols(n: usize) -> Vec<Option<usize>> {
    (0..n).map(Some).collect()
}

/// Kernel dimension and smallest non-zero eigenvalues of the persistent
/// Laplacians of each requested degree.
pub fn persistent_summary(
    f: &Filtration,
    l: usize,
    p: usize,
    degrees: &[usize],
    want_nonzero: usize,
    kind: LaplacianKind,
    opts: &SolverOptions,
) -> Result<Vec<SpectrumSummary>> {
    degrees
        .iter()
        .map(|&k| {
            let pair = persistent_operators(f, l, p, k, kind)?;
            let s = pair.spectrum(f, want_nonzero, opts)?;
            Ok(SpectrumSummary {
                isovalue: Some(f.isovalues[l]),
                degree: k,
                bc: BoundaryCondition::Normal,
                kind,
                kernel_dim: s.kernel_dim,
                nonzero_eigenvalues: s.nonzero,
                zero_threshold: s.zero_threshold,
            })
        })
        .collect()
}

/// One persistent spectrum of a sweep over `(l, p)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceRecord {
    pub l: usize,
    pub p: usize,
    pub isovalue_start: f64,
    pub isovalue_end: f64,
    pub degree: usize,
    pub kind: LaplacianKind,
    pub kernel_dim: usize,
    pub nonzero_eigenvalues: Vec<f64>,
    pub zero_threshold: f64,
}

impl PersistenceRecord {
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Persistent spectra for every `l` and every `p ≤ max_span` inside the
/// filtration, ordered by `(l, p, degree)`.
pub fn persistence_sweep(
    f: &Filtration,
    max_span: usize,
    degrees: &[usize],
    want_nonzero: usize,
    kind: LaplacianKind,
    opts: &SolverOptions,
) -> Result<Vec<PersistenceRecord>> {
    let pairs: Vec<(usize, usize)> = (0..f.len())
        .flat_map(|l| (0..=max_span).filter(move |p| l + p < f.len()).map(move |p| (l, p)))
        .collect();
    let per_pair: Vec<Vec<PersistenceRecord>> = pairs
        .par_iter()
        .map(|&(l, p)| {
            Ok(persistent_summary(f, l, p, degrees, want_nonzero, kind, opts)?
                .into_iter()
                .map(|s| PersistenceRecord {
                    l,
                    p,
                    isovalue_start: f.isovalues[l],
                    isovalue_end: f.isovalues[l + p],
                    degree: s.degree,
                    kind,
                    kernel_dim: s.kernel_dim,
                    nonzero_eigenvalues: s.nonzero_eigenvalues,
                    zero_threshold: s.zero_threshold,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// Betti numbers and leading T/C/N eigenvalues at every level.
pub fn level_sweep(f: &Filtration, kind: LaplacianKind, opts: &SolverOptions) -> Result<Vec<LevelSummary>> {
    f.levels.par_iter().map(|ops| level_summary(ops, kind, opts)).collect()
}

/// CSV with columns `isovalue,beta0,beta1,beta2,lambda_t,lambda_c,lambda_n`;
/// a missing eigenvalue is an empty field.
pub fn write_level_csv<W: Write>(rows: &[LevelSummary], mut w: W) -> std::io::Result<()> {
    writeln!(w, "isovalue,beta0,beta1,beta2,lambda_t,lambda_c,lambda_n")?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.isovalue,
            r.betti[0],
            r.betti[1],
            r.betti[2],
            opt(r.lambda_t),
            opt(r.lambda_c),
            opt(r.lambda_n)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::Shape;

    fn ball_filtration() -> Filtration {
        let field = ScalarField::sphere([0.02, -0.03, 0.01], 1.0).unwrap();
        let grid = Arc::new(GridComplex::centered([0.0; 3], [1.6; 3], 0.4).unwrap());
        build_filtration(&field, grid, &[-0.3, -0.1, 0.1]).unwrap()
    }

    #[test]
    fn rejects_unsorted_isovalues() {
        let field = ScalarField::sphere([0.0; 3], 1.0).unwrap();
        let grid = Arc::new(GridComplex::centered([0.0; 3], [1.5; 3], 0.5).unwrap());
        assert!(build_filtration(&field, grid.clone(), &[0.1, 0.1]).is_err());
        assert!(build_filtration(&field, grid, &[]).is_err());
    }

    #[test]
    fn zero_span_extension_is_identity() {
        let f = ball_filtration();
        for k in 0..=3 {
            let e = extension_operator(&f, 1, 0, k, LaplacianKind::Hodge).unwrap();
            let n = f.level(1).support(k).len();
            assert_eq!(e.matrix.shape(), (n, n));
            assert!(e.band_rows.is_empty());
            for (i, j, v) in e.matrix.triplets() {
                assert_eq!(i, j);
                assert_eq!(v, 1.0);
            }
            assert_eq!(e.matrix.nnz(), n);
        }
    }

    #[test]
    fn old_rows_are_rescaled_identity() {
        let f = ball_filtration();
        for k in 0..=3 {
            let e = extension_operator(&f, 0, 2, k, LaplacianKind::Hodge).unwrap();
            for (i, &row) in e.old_rows.iter().enumerate() {
                let (cols, vals) = e.matrix.row(row);
                assert_eq!(cols, &[i]);
                assert_eq!(vals[0], e.ratios[i]);
            }
            let big = extension_operator(&f, 0, 2, k, LaplacianKind::Big).unwrap();
            assert!(big.ratios.iter().all(|&r| r == 1.0));
        }
    }

    #[test]
    fn out_of_range_pair() {
        let f = ball_filtration();
        assert!(matches!(
            extension_operator(&f, 2, 1, 1, LaplacianKind::Big),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_field_gives_empty_levels() {
        let grid = Arc::new(GridComplex::new([5, 5, 5], 1.0, [0.0; 3]).unwrap());
        let samples = RawSamples {
            primal: vec![10.0; grid.num_vertices()],
            dual: vec![10.0; grid.num_cells(3)],
            grid,
        };
        let f = Filtration::from_samples(&samples, &[0.0, 1.0], false).unwrap();
        for l in 0..2 {
            assert_eq!(f.level(l).dims(), [0; 4]);
        }
        let s = persistent_summary(
            &f,
            0,
            1,
            &[0, 1, 2, 3],
            1,
            LaplacianKind::Big,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(s.iter().all(|x| x.kernel_dim == 0));
    }

    #[test]
    fn sparse_band_solve_matches_pseudoinverse() {
        // Two disconnected paths: a kernel of dimension two.
        let n = 6;
        let mut t = vec![];
        for i in 0..n - 1 {
            if i == 2 {
                continue;
            }
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let h = SparseMatrix::from_triplets(n, n, &t);
        let mut b = Mat::<f64>::zeros(n, 2);
        for i in 0..n {
            b[(i, 0)] = (i as f64).sin();
            b[(i, 1)] = 1.0 + i as f64;
        }
        let coords: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let x = psd_min_norm_solve(&h, b.clone(), &coords).unwrap();
        let xd = pinv_apply(&h, &b).unwrap();
        for i in 0..n {
            for c in 0..2 {
                assert!(
                    (x[(i, c)] - xd[(i, c)]).abs() < 1e-10,
                    "{} vs {}",
                    x[(i, c)],
                    xd[(i, c)]
                );
            }
        }
    }

    #[test]
    fn sparse_and_dense_band_paths_agree() {
        let f = ball_filtration();
        for k in 0..=3 {
            for kind in [LaplacianKind::Hodge, LaplacianKind::Big] {
                let a = extension_data(&f, 0, 2, k, kind, usize::MAX)
                    .unwrap()
                    .into_operator(0, 2, k, kind);
                let b = extension_data(&f, 0, 2, k, kind, 0)
                    .unwrap()
                    .into_operator(0, 2, k, kind);
                let diff = a.matrix.add(&b.matrix.scaled(-1.0)).max_abs();
                assert!(diff <= 1e-8 * a.matrix.max_abs(), "k={k} {kind}: {diff}");
            }
        }
    }

    #[test]
    fn level_csv_layout() {
        let rows = vec![LevelSummary {
            isovalue: 2.0,
            betti: [4, 0, 0],
            lambda_t: Some(0.5),
            lambda_c: None,
            lambda_n: Some(1.0),
        }];
        let mut out = Vec::new();
        write_level_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "isovalue,beta0,beta1,beta2,lambda_t,lambda_c,lambda_n"
        );
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[..4], ["2", "4", "0", "0"]);
        assert_eq!(fields[5], "");
    }

    #[test]
    fn single_ball_levels_are_connected() {
        let shape = Shape::Ball { radius: 1.0 };
        let grid = Arc::new(shape.grid_with_spacing(0.25, 0.3).unwrap());
        let field = shape.field().unwrap();
        let f = build_filtration(&field, grid, &[-0.2, 0.0, 0.3]).unwrap();
        for ops in f.levels() {
            assert_eq!(crate::topology::betti_numbers(ops.sampled())[0], 1);
        }
    }
}
