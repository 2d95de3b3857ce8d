//! Kernel dimensions and smallest non-zero eigenvalues of assembled
//! Laplacians, the T/C/N split of the symmetrized spectrum, and a dense oracle.

use serde::{Deserialize, Serialize};

use crate::eigen::{dense_eigenvalues, smallest_eigenpairs, zero_threshold, Eigenpairs, SolverOptions};
use crate::error::{Error, Result};
use crate::laplacian::{LaplacianKind, OperatorSet};
use crate::sparse::SparseMatrix;
use crate::support::BoundaryCondition;

/// Largest dimension accepted by [`dense_oracle`].
pub const DENSE_ORACLE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub isovalue: Option<f64>,
    pub degree: usize,
    pub bc: BoundaryCondition,
    pub kind: LaplacianKind,
    pub kernel_dim: usize,
    pub nonzero_eigenvalues: Vec<f64>,
    pub zero_threshold: f64,
}

impl SpectrumSummary {
    /// One-line JSON record.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

/// Kernel dimension and leading non-zero eigenvalues of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub kernel_dim: usize,
    pub nonzero: Vec<f64>,
    pub zero_threshold: f64,
    pub max_residual: f64,
}

fn split(e: Eigenpairs, want: usize) -> Spectrum {
    let nonzero: Vec<f64> = e.values[e.kernel_dim..].iter().copied().take(want).collect();
    Spectrum {
        kernel_dim: e.kernel_dim,
        nonzero,
        zero_threshold: e.zero_threshold,
        max_residual: e.max_residual,
    }
}

fn inverse_sqrt(metric: &[f64]) -> Result<Vec<f64>> {
    metric
        .iter()
        .map(|&s| {
            if s > 0.0 && s.is_finite() {
                Ok(1.0 / s.sqrt())
            } else {
                Err(Error::InvalidArgument(format!("metric entry {s} is not positive")))
            }
        })
        .collect()
}

/// Spectrum of `L x = λ S x` for a positive diagonal `S` (plain `L x = λ x`
/// when `metric` is `None`), via `S^{-1/2} L S^{-1/2}`.
pub fn spectrum(
    l: &SparseMatrix,
    want_nonzero: usize,
    metric: Option<&[f64]>,
    coords: Option<&[[f64; 3]]>,
    opts: &SolverOptions,
) -> Result<Spectrum> {
    let scaled;
    let a = match metric {
        Some(s) => {
            if s.len() != l.nrows() {
                return Err(Error::InvalidArgument("metric length does not match matrix".into()));
            }
            let w = inverse_sqrt(s)?;
            scaled = l.scale(Some(&w), Some(&w));
            &scaled
        }
        None => l,
    };
    Ok(split(
        smallest_eigenpairs(a, want_nonzero, coords, opts, false)?,
        want_nonzero,
    ))
}

/// Full ascending (generalized) spectrum by dense decomposition.
pub fn dense_oracle(l: &SparseMatrix, metric: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = l.nrows();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense oracle limited to dimension {DENSE_ORACLE_LIMIT}, got {n}"
        )));
    }
    let m = match metric {
        Some(s) => {
            let w = inverse_sqrt(s)?;
            l.scale(Some(&w), Some(&w)).to_dense()
        }
        None => l.to_dense(),
    };
    dense_eigenvalues(&m)
}

/// Squared singular values of a sparse matrix, descending order removed:
/// ascending, all of them (including zeros up to `min(rows, cols)`).
pub fn squared_singular_values(d: &SparseMatrix) -> Result<Vec<f64>> {
    let (r, c) = d.shape();
    if r.min(c) == 0 {
        return Ok(vec![]);
    }
    let s = d.to_dense().singular_values().map_err(|e| Error::SolverFailure {
        message: format!("SVD failed: {e:?}"),
        iterations: 0,
        converged: 0,
        wanted: r.min(c),
    })?;
    let mut out: Vec<f64> = s.iter().map(|x| x * x).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Cell centers of the support of degree `k`, for the fill-reducing ordering.
pub fn support_coordinates(ops: &OperatorSet, k: usize) -> Vec<[f64; 3]> {
    let grid = ops.grid();
    ops.support(k)
        .members()
        .iter()
        .map(|&g| grid.cell_center(grid.cell(k, g)))
        .collect()
}

/// Spectrum of the Laplacian of degree `k` and `kind`. Hodge spectra are the
/// generalized spectra of `(L_k, S_k)`.
pub fn laplacian_spectrum(
    ops: &OperatorSet,
    k: usize,
    kind: LaplacianKind,
    want_nonzero: usize,
    opts: &SolverOptions,
) -> Result<SpectrumSummary> {
    let a = ops.spectral_matrix(k, kind)?;
    let coords = support_coordinates(ops, k);
    let s = spectrum(a, want_nonzero, None, Some(&coords), opts)?;
    Ok(SpectrumSummary {
        isovalue: Some(ops.sampled().isovalue()),
        degree: k,
        bc: ops.bc(),
        kind,
        kernel_dim: s.kernel_dim,
        nonzero_eigenvalues: s.nonzero,
        zero_threshold: s.zero_threshold,
    })
}

/// Betti numbers `(β₀, β₁, β₂)` from Laplacian kernels. Under the normal
/// condition `dim ker L_k = β_{3−k}`, under the tangential one `β_k`.
pub fn betti_from_kernels(ops: &OperatorSet, kind: LaplacianKind, opts: &SolverOptions) -> Result<[usize; 3]> {
    let mut b = [0usize; 3];
    for (i, slot) in b.iter_mut().enumerate() {
        let k = match ops.bc() {
            BoundaryCondition::Normal => 3 - i,
            BoundaryCondition::Tangential => i,
        };
        *slot = laplacian_spectrum(ops, k, kind, 0, opts)?.kernel_dim;
    }
    Ok(b)
}

/// Non-zero squared singular values of the three symmetrized differentials of
/// a normal-condition operator set: `T` from `D̄_2`, `C` from `D̄_1`, `N` from
/// `D̄_0`, each ascending and truncated to the requested count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnSplit {
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    pub n: Vec<f64>,
    /// `dim ker L̄_3 = β₀`.
    pub kernel_3: usize,
    /// `dim ker L̄_1 = β₂`.
    pub kernel_1: usize,
    pub zero_threshold: f64,
}

impl TcnSplit {
    pub fn min_t(&self) -> Option<f64> {
        self.t.first().copied()
    }
    pub fn min_c(&self) -> Option<f64> {
        self.c.first().copied()
    }
    pub fn min_n(&self) -> Option<f64> {
        self.n.first().copied()
    }
}

/// T/C/N split, `want` values of each. `T` is the non-zero spectrum of
/// `L̄_3 = D̄_2D̄_2ᵀ` and `N` that of `L̄_0 = D̄_0ᵀD̄_0`. `C` comes from
/// `D̄_1ᵀD̄_1 + α·D̄_0D̄_0ᵀ`, whose eigenvectors split between the two terms;
/// `α` grows until the wanted `C` values sit below every `α·N` value. For
/// the BIG kind every `D̄` is the plain restricted differential.
pub fn tcn_split(ops: &OperatorSet, kind: LaplacianKind, want: usize, opts: &SolverOptions) -> Result<TcnSplit> {
    if ops.bc() != BoundaryCondition::Normal {
        return Err(Error::InvalidArgument(
            "T/C/N split needs a normal-condition operator set".into(),
        ));
    }
    let l3 = laplacian_spectrum(ops, 3, kind, want, opts)?;
    let l0 = laplacian_spectrum(ops, 0, kind, want, opts)?;
    let d1 = ops.symmetrized_differential(1, kind)?;
    let d0 = ops.symmetrized_differential(0, kind)?;
    let up = d1.transpose().matmul(&d1);
    let down = d0.matmul(&d0.transpose());
    let thr = l3.zero_threshold.max(l0.zero_threshold);
    let coords = support_coordinates(ops, 1);
    let n1 = up.nrows();
    let mut alpha = 16.0;
    let mut c = Vec::new();
    let mut kernel_1 = 0;
    for attempt in 0..6 {
        let m = up.add(&down.scaled(alpha));
        let e = smallest_eigenpairs(&m, want, Some(&coords), opts, true)?;
        kernel_1 = e.kernel_dim;
        let vecs = e.vectors.as_ref().expect("vectors requested");
        c.clear();
        let mut saw_n = false;
        for j in e.kernel_dim..e.values.len() {
            let x: Vec<f64> = vecs.col(j).iter().copied().collect();
            let dx = d1.apply(&x);
            let curl: f64 = dx.iter().map(|v| v * v).sum();
            if curl >= 0.5 * e.values[j] {
                c.push(e.values[j]);
            } else {
                saw_n = true;
            }
        }
        if c.len() >= want || !saw_n || e.values.len() == n1 || attempt == 5 {
            break;
        }
        alpha *= 16.0;
    }
    c.truncate(want);
    Ok(TcnSplit {
        t: l3.nonzero_eigenvalues,
        c,
        n: l0.nonzero_eigenvalues,
        kernel_3: l3.kernel_dim,
        kernel_1,
        zero_threshold: thr.max(zero_threshold(up.gershgorin_bound())),
    })
}

/// Betti numbers and leading T/C/N values of one normal-condition level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub isovalue: f64,
    pub betti: [usize; 3],
    pub lambda_t: Option<f64>,
    pub lambda_c: Option<f64>,
    pub lambda_n: Option<f64>,
}

/// `β₀ = dim ker L̄_3`, `β₂ = dim ker L̄_1` (both from the T/C/N solves) and
/// `β₁ = dim ker L̄_2`.
pub fn level_summary(ops: &OperatorSet, kind: LaplacianKind, opts: &SolverOptions) -> Result<LevelSummary> {
    let tcn = tcn_split(ops, kind, 1, opts)?;
    let b1 = laplacian_spectrum(ops, 2, kind, 0, opts)?.kernel_dim;
    Ok(LevelSummary {
        isovalue: ops.sampled().isovalue(),
        betti: [tcn.kernel_3, b1, tcn.kernel_1],
        lambda_t: tcn.min_t(),
        lambda_c: tcn.min_c(),
        lambda_n: tcn.min_n(),
    })
}
