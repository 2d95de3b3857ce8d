//! Smallest eigenpairs of sparse symmetric positive semidefinite matrices.
//!
//! Small problems go through a dense symmetric eigendecomposition. Larger ones
//! use block Lanczos with full reorthogonalization on `(A + δI)⁻¹`, where the
//! shifted matrix is factored once by sparse Cholesky. Ritz pairs come from
//! projecting the unshifted matrix onto the Krylov basis, which keeps the
//! large inverted kernel values out of the small eigenproblem. Every returned
//! pair has its residual checked against `tol · max(1, ‖A‖)`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::perm::Perm;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Problems of at most this dimension are solved densely.
    pub dense_limit: usize,
    /// Initial Lanczos block size; doubled when a kernel fills the block.
    pub block_size: usize,
    /// Largest Krylov basis before giving up.
    pub max_basis: usize,
    /// Relative residual bound `‖Ax − λx‖ ≤ tol·max(1, ‖A‖)`.
    pub tol: f64,
    pub seed: u64,
    /// Scale for the zero threshold in place of the matrix's own Gershgorin
    /// bound, for matrices whose norm is inflated by a few large entries.
    pub zero_scale: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            dense_limit: 2000,
            block_size: 8,
            max_basis: 600,
            tol: 1e-10,
            seed: 0x5eed_1234,
            zero_scale: None,
        }
    }
}

/// Relative zero threshold `1e-9·max(1, Gershgorin bound)`.
pub fn zero_threshold(gershgorin: f64) -> f64 {
    1e-9 * gershgorin.max(1.0)
}

/// Outcome of a smallest-eigenvalue computation.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// All computed eigenvalues below the threshold, then the requested
    /// non-zero ones, ascending.
    pub values: Vec<f64>,
    /// Unit eigenvectors matching `values` (column `j` for value `j`).
    pub vectors: Option<Mat<f64>>,
    pub kernel_dim: usize,
    pub zero_threshold: f64,
    pub max_residual: f64,
}

/// Kernel and the `want` smallest non-zero eigenpairs of the PSD matrix `a`.
/// `coords` (one point per row) enables a geometric fill-reducing ordering.
pub fn smallest_eigenpairs(
    a: &SparseMatrix,
    want: usize,
    coords: Option<&[[f64; 3]]>,
    opts: &SolverOptions,
    keep_vectors: bool,
) -> Result<Eigenpairs> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let g = a.gershgorin_bound();
    let thr = zero_threshold(opts.zero_scale.unwrap_or(g));
    if n == 0 {
        return Ok(Eigenpairs {
            values: vec![],
            vectors: keep_vectors.then(|| Mat::zeros(0, 0)),
            kernel_dim: 0,
            zero_threshold: thr,
            max_residual: 0.0,
        });
    }
    if n <= opts.dense_limit {
        return dense_smallest(a, want, thr, keep_vectors);
    }
    let ordering = match coords {
        Some(c) => Some(nested_dissection(c, a)),
        None => None,
    };
    let mut shift = 1e-8 * g.max(1.0);
    let fact = loop {
        match ShiftedCholesky::new(a, shift, ordering.as_deref()) {
            Ok(f) => break f,
            Err(_) if shift < 1e-3 * g.max(1.0) => shift *= 100.0,
            Err(e) => return Err(e),
        }
    };
    let mut block = opts.block_size.max(2);
    loop {
        let mut out = block_lanczos(a, &fact, want, thr, block, opts)?;
        if out.kernel_dim + 1 >= block && block < n {
            block = (2 * block).min(n);
            continue;
        }
        let keep = (out.kernel_dim + want).min(out.values.len());
        out.values.truncate(keep);
        if let Some(v) = out.vectors.as_mut() {
            *v = v.subcols(0, keep).to_owned();
        }
        if !keep_vectors {
            out.vectors = None;
        }
        return Ok(out);
    }
}

fn dense_smallest(a: &SparseMatrix, want: usize, thr: f64, keep_vectors: bool) -> Result<Eigenpairs> {
    let d = a.to_dense();
    let evd = d
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| solver_error(format!("dense eigendecomposition failed: {e:?}"), 0, 0, want))?;
    let s = evd.S().column_vector();
    let n = a.nrows();
    let all: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let kernel_dim = all.iter().filter(|&&v| v < thr).count();
    let take = (kernel_dim + want).min(n);
    let values = all[..take].to_vec();
    let vectors = keep_vectors.then(|| evd.U().subcols(0, take).to_owned());
    Ok(Eigenpairs {
        values,
        vectors,
        kernel_dim,
        zero_threshold: thr,
        max_residual: 0.0,
    })
}

/// Full ascending spectrum of a dense symmetric matrix.
pub fn dense_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| solver_error(format!("dense eigendecomposition failed: {e:?}"), 0, 0, m.nrows()))
}

fn solver_error(message: String, iterations: usize, converged: usize, wanted: usize) -> Error {
    Error::SolverFailure {
        message,
        iterations,
        converged,
        wanted,
    }
}

/// Sparse Cholesky factor of `A + shift·I`.
pub struct ShiftedCholesky {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    n: usize,
}

impl ShiftedCholesky {
    pub fn new(a: &SparseMatrix, shift: f64, ordering: Option<&[usize]>) -> Result<Self> {
        let n = a.nrows();
        let mut trip: Vec<Triplet<usize, usize, f64>> = a
            .triplets()
            .filter(|&(i, j, _)| i >= j)
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        trip.extend((0..n).map(|i| Triplet::new(i, i, shift)));
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::Internal(format!("sparse assembly failed: {e:?}")))?;
        let symbolic = match ordering {
            Some(fwd) => {
                let mut inv = vec![0usize; n];
                for (new, &old) in fwd.iter().enumerate() {
                    inv[old] = new;
                }
                let perm = Perm::<usize>::new_checked(fwd.to_vec().into_boxed_slice(), inv.into_boxed_slice(), n);
                factorize_symbolic_cholesky(
                    m.symbolic(),
                    Side::Lower,
                    SymmetricOrdering::Custom(perm.as_ref()),
                    Default::default(),
                )
            }
            None => factorize_symbolic_cholesky(m.symbolic(), Side::Lower, SymmetricOrdering::Amd, Default::default()),
        }
        .map_err(|e| Error::Internal(format!("symbolic Cholesky failed: {e:?}")))?;
        let mut values = vec![0.0f64; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()));
        symbolic
            .factorize_numeric_llt(
                &mut values,
                m.as_ref(),
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| solver_error(format!("shifted matrix not positive definite: {e:?}"), 0, 0, 0))?;
        Ok(ShiftedCholesky { symbolic, values, n })
    }

    /// Overwrites `rhs` with `(A + shift·I)⁻¹ rhs`.
    pub fn solve_in_place(&self, rhs: &mut Mat<f64>) {
        assert_eq!(rhs.nrows(), self.n);
        let llt = LltRef::<usize, f64>::new(&self.symbolic, &self.values);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(rhs.ncols(), Par::Seq));
        llt.solve_in_place_with_conj(Conj::No, rhs.as_mut(), Par::Seq, MemStack::new(&mut mem));
    }
}

fn orthonormalize_against(q: &Mat<f64>, m: usize, w: &mut Mat<f64>) {
    if m == 0 {
        return;
    }
    for _ in 0..2 {
        let basis = q.subcols(0, m);
        let h = basis.transpose() * w.as_ref();
        *w -= basis * &h;
    }
}

/// Orthonormalizes the columns of `w` in place (two passes of modified
/// Gram–Schmidt) and returns the indices of columns that survived.
fn orthonormalize_block(w: &mut Mat<f64>, scale: &[f64]) -> Vec<usize> {
    let p = w.ncols();
    let mut kept = Vec::new();
    for j in 0..p {
        for _ in 0..2 {
            for &i in &kept {
                let dot: f64 = w.col(i).transpose() * w.col(j);
                let (ci, mut cj) = two_cols(w, i, j);
                for r in 0..cj.nrows() {
                    cj[r] -= dot * ci[r];
                }
            }
        }
        let norm = w.col(j).norm_l2();
        if norm > 1e-10 * scale[j].max(f64::MIN_POSITIVE) {
            let mut c = w.col_mut(j);
            for r in 0..c.nrows() {
                c[r] /= norm;
            }
            kept.push(j);
        }
    }
    kept
}

/// Columns of `w` made orthonormal to the first `m` basis vectors and to each
/// other. Columns that are numerically inside the span are dropped.
fn extend_basis(q: &Mat<f64>, m: usize, mut w: Mat<f64>) -> Mat<f64> {
    let scale: Vec<f64> = (0..w.ncols()).map(|j| w.col(j).norm_l2()).collect();
    orthonormalize_against(q, m, &mut w);
    let kept = orthonormalize_block(&mut w, &scale);
    let mut w = Mat::<f64>::from_fn(w.nrows(), kept.len(), |r, c| w[(r, kept[c])]);
    // Columns that nearly vanished carry amplified rounding; project once more.
    orthonormalize_against(q, m, &mut w);
    let unit = vec![1.0; w.ncols()];
    let kept = orthonormalize_block(&mut w, &unit);
    Mat::<f64>::from_fn(w.nrows(), kept.len(), |r, c| w[(r, kept[c])])
}

fn two_cols(w: &mut Mat<f64>, i: usize, j: usize) -> (Vec<f64>, faer::ColMut<'_, f64>) {
    let ci: Vec<f64> = w.col(i).iter().copied().collect();
    (ci, w.col_mut(j))
}

fn block_lanczos(
    a: &SparseMatrix,
    fact: &ShiftedCholesky,
    want: usize,
    thr: f64,
    p: usize,
    opts: &SolverOptions,
) -> Result<Eigenpairs> {
    let n = a.nrows();
    let g = a.gershgorin_bound().max(1.0);
    let max_basis = opts.max_basis.max(4 * p).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = Mat::<f64>::zeros(n, max_basis);
    // Projection QᵀAQ of the operator itself, grown with the basis.
    let mut h = Mat::<f64>::zeros(max_basis, max_basis);
    let mut m = 0usize;

    let mut next = Mat::<f64>::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
    let mut iterations = 0;
    let mut best_converged = 0;
    loop {
        let mut fresh = extend_basis(&q, m, next);
        if fresh.ncols() == 0 {
            // Invariant subspace: restart the block from fresh random directions.
            let random = Mat::<f64>::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
            fresh = extend_basis(&q, m, random);
            if fresh.ncols() == 0 {
                break;
            }
        }
        let b = fresh.ncols().min(max_basis - m);
        if b == 0 {
            break;
        }
        for slot in 0..b {
            q.col_mut(m + slot).copy_from(fresh.col(slot));
        }
        let mut w = q.subcols(m, b).to_owned();
        let mut aq = Mat::<f64>::zeros(n, b);
        for j in 0..b {
            let x: Vec<f64> = w.col(j).iter().copied().collect();
            let y = a.apply(&x);
            for (i, v) in y.into_iter().enumerate() {
                aq[(i, j)] = v;
            }
        }
        fact.solve_in_place(&mut w);
        let proj = q.subcols(0, m + b).transpose() * aq.as_ref();
        for j in 0..b {
            for i in 0..m + b {
                let v = proj[(i, j)];
                h[(i, m + j)] = v;
                h[(m + j, i)] = v;
            }
        }
        for j in 0..b {
            for i in m..m + b {
                let v = 0.5 * (h[(i, m + j)] + h[(m + j, i)]);
                h[(i, m + j)] = v;
                h[(m + j, i)] = v;
            }
        }
        m += b;
        iterations += 1;
        next = w;

        if m >= (want + 1).min(n) {
            let res = rayleigh_ritz(a, &q, &h, m, want, thr, g, opts.tol);
            if let Some(done) = res.0 {
                return Ok(done);
            }
            best_converged = best_converged.max(res.1);
        }
        if m >= max_basis {
            break;
        }
    }
    Err(solver_error(
        format!("block Lanczos did not converge within a basis of {m} vectors"),
        iterations,
        best_converged,
        want,
    ))
}

#[allow(clippy::too_many_arguments)]
fn rayleigh_ritz(
    a: &SparseMatrix,
    q: &Mat<f64>,
    h: &Mat<f64>,
    m: usize,
    want: usize,
    thr: f64,
    g: f64,
    tol: f64,
) -> (Option<Eigenpairs>, usize) {
    let hm = h.subrows(0, m).subcols(0, m).to_owned();
    let Ok(evd) = hm.self_adjoint_eigen(Side::Lower) else {
        return (None, 0);
    };
    let basis = q.subcols(0, m);
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    let mut kernel = 0usize;
    let mut nonzero = 0usize;
    let mut max_res: f64 = 0.0;
    let mut converged = 0usize;
    for idx in 0..m {
        let y = evd.U().col(idx);
        let x = basis * y;
        let norm = x.norm_l2();
        let xv: Vec<f64> = x.iter().map(|v| v / norm).collect();
        let ax = a.apply(&xv);
        let lam: f64 = xv.iter().zip(&ax).map(|(u, v)| u * v).sum();
        let r: f64 = ax
            .iter()
            .zip(&xv)
            .map(|(v, u)| (v - lam * u).powi(2))
            .sum::<f64>()
            .sqrt();
        if r > tol * g {
            break;
        }
        converged += 1;
        max_res = max_res.max(r / g);
        if lam < thr {
            if nonzero > 0 {
                // A zero found after non-zero values means ordering is not yet settled.
                return (None, converged);
            }
            kernel += 1;
        } else {
            nonzero += 1;
        }
        values.push(lam);
        vectors.push(xv);
        // One converged non-zero value beyond the kernel certifies its dimension.
        if nonzero >= want.max(1) {
            break;
        }
    }
    let total = a.nrows();
    let enough = nonzero >= want.max(1) || kernel + nonzero == total;
    // Require a spare converged-or-not Ritz value beyond the wanted ones so a
    // nearly degenerate partner is not silently skipped. A basis spanning the
    // whole space is exact.
    if !enough || (values.len() + 1 > m && m < total) {
        return (None, converged);
    }
    let mut vm = Mat::<f64>::zeros(total, values.len());
    for (j, v) in vectors.iter().enumerate() {
        for i in 0..total {
            vm[(i, j)] = v[i];
        }
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted_vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let sorted_vecs = Mat::<f64>::from_fn(total, idx.len(), |r, c| vm[(r, idx[c])]);
    (
        Some(Eigenpairs {
            values: sorted_vals,
            vectors: Some(sorted_vecs),
            kernel_dim: kernel,
            zero_threshold: thr,
            max_residual: max_res,
        }),
        converged,
    )
}

/// Fill-reducing order from recursive coordinate bisection. Each split puts
/// the points on the upper side that couple to the lower side (according to
/// the sparsity pattern of `a`) into a separator ordered after both halves.
/// Returns `order[new] = old`.
pub fn nested_dissection(coords: &[[f64; 3]], a: &SparseMatrix) -> Vec<usize> {
    let n = coords.len();
    assert_eq!(n, a.nrows());
    let mut order = Vec::with_capacity(n);
    let mut side = vec![0u8; n];
    let all: Vec<usize> = (0..n).collect();
    dissect(all, coords, a, &mut side, &mut order);
    order
}

fn dissect(set: Vec<usize>, coords: &[[f64; 3]], a: &SparseMatrix, side: &mut [u8], order: &mut Vec<usize>) {
    const LEAF: usize = 64;
    if set.len() <= LEAF {
        order.extend(set);
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &set {
        for d in 0..3 {
            lo[d] = lo[d].min(coords[i][d]);
            hi[d] = hi[d].max(coords[i][d]);
        }
    }
    let axis = (0..3)
        .max_by(|&x, &y| (hi[x] - lo[x]).total_cmp(&(hi[y] - lo[y])))
        .unwrap();
    let mut vals: Vec<f64> = set.iter().map(|&i| coords[i][axis]).collect();
    let mid = vals.len() / 2;
    vals.select_nth_unstable_by(mid, f64::total_cmp);
    let split = vals[mid];
    // 1 = lower half, 2 = upper half, 3 = separator.
    for &i in &set {
        side[i] = if coords[i][axis] < split { 1 } else { 2 };
    }
    let lower: Vec<usize> = set.iter().copied().filter(|&i| side[i] == 1).collect();
    if lower.is_empty() || lower.len() == set.len() {
        for &i in &set {
            side[i] = 0;
        }
        order.extend(set);
        return;
    }
    let mut upper = Vec::new();
    let mut sep = Vec::new();
    for &i in &set {
        if side[i] != 2 {
            continue;
        }
        if a.row(i).0.iter().any(|&j| side[j] == 1) {
            sep.push(i);
        } else {
            upper.push(i);
        }
    }
    for &i in &set {
        side[i] = 0;
    }
    dissect(lower, coords, a, side, order);
    dissect(upper, coords, a, side, order);
    order.extend(sep);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.push((i, i, 1.0));
            t.push((i + 1, i + 1, 1.0));
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
        SparseMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn dense_path_spectrum() {
        let l = path_laplacian(3);
        let e = smallest_eigenpairs(&l, 2, None, &SolverOptions::default(), false).unwrap();
        assert_eq!(e.kernel_dim, 1);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        assert!((e.values[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn krylov_basis_filling_the_space_is_exact() {
        // Twelve-node path plus a shifted copy: n = 24 equals three blocks of 8.
        let n = 24;
        let mut t: Vec<(usize, usize, f64)> = path_laplacian(n).triplets().collect();
        t.extend([(0, 0, 1.0), (0, 12, -1.0), (12, 0, -1.0), (12, 12, 1.0)]);
        let l = SparseMatrix::from_triplets(n, n, &t);
        let opts = SolverOptions {
            dense_limit: 0,
            ..Default::default()
        };
        let it = smallest_eigenpairs(&l, 4, None, &opts, false).unwrap();
        let dense = smallest_eigenpairs(&l, 4, None, &SolverOptions::default(), false).unwrap();
        assert_eq!(it.kernel_dim, 1);
        for (a, b) in it.values.iter().zip(&dense.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn lanczos_matches_dense_on_disconnected_paths() {
        // Three disjoint paths: kernel of dimension 3.
        let n = 300;
        let mut t = Vec::new();
        for i in 0..n - 1 {
            if (i + 1) % 100 == 0 {
                continue;
            }
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let l = SparseMatrix::from_triplets(n, n, &t);
        let dense = smallest_eigenpairs(&l, 5, None, &SolverOptions::default(), false).unwrap();
        let opts = SolverOptions {
            dense_limit: 0,
            ..Default::default()
        };
        let coords: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let it = smallest_eigenpairs(&l, 5, Some(&coords), &opts, true).unwrap();
        assert_eq!(it.kernel_dim, 3);
        assert_eq!(dense.kernel_dim, 3);
        for (a, b) in it.values[3..].iter().zip(&dense.values[3..]) {
            assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn dissection_is_a_permutation() {
        let l = path_laplacian(500);
        let coords: Vec<[f64; 3]> = (0..500).map(|i| [i as f64, 0.0, 0.0]).collect();
        let mut o = nested_dissection(&coords, &l);
        o.sort_unstable();
        assert_eq!(o, (0..500).collect::<Vec<_>>());
    }
}
