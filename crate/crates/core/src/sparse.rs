//! Compressed sparse row matrices.
//!
//! Entries are generic so incidence algebra can stay in exact integers while
//! assembled operators use `f64`. Rows keep their column indices sorted and
//! free of duplicates; explicit zeros are dropped on construction.

use std::io::{BufRead, Write};
use std::ops::{Add, AddAssign, Mul, Neg};

use crate::error::{Error, Result};

pub trait Entry:
    Copy + Default + PartialEq + Add<Output = Self> + AddAssign + Mul<Output = Self> + Neg<Output = Self> + Send + Sync
{
    fn is_zero(self) -> bool {
        self == Self::default()
    }
    fn to_f64(self) -> f64;
}

impl Entry for i32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Entry for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

pub type SparseMatrix = Csr<f64>;

impl<T: Entry> Csr<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::default(); triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, T)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|p| (cols[p], vals[p])));
            row.sort_by_key(|e| e.0);
            let mut p = 0;
            while p < row.len() {
                let c = row[p].0;
                let mut v = row[p].1;
                p += 1;
                while p < row.len() && row[p].0 == c {
                    v += row[p].1;
                    p += 1;
                }
                if !v.is_zero() {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Assembles directly from sorted, duplicate-free rows.
    pub(crate) fn from_rows<I>(nrows: usize, ncols: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = Vec<(usize, T)>>,
    {
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < ncols);
                if !v.is_zero() {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        assert_eq!(indptr.len(), nrows + 1, "row count mismatch");
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self
    where
        T: From<i8>,
    {
        Self::diagonal(&vec![T::from(1); n])
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        Self::from_rows(n, n, diag.iter().enumerate().map(|(i, &d)| vec![(i, d)]))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::default(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn map<U: Entry>(&self, f: impl Fn(T) -> U) -> Csr<U> {
        let rows = (0..self.nrows).map(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&j, &v)| (j, f(v))).collect::<Vec<_>>()
        });
        Csr::from_rows(self.nrows, self.ncols, rows)
    }

    pub fn to_f64(&self) -> Csr<f64> {
        self.map(Entry::to_f64)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![T::default(); self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                indices[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// Sparse product `self * rhs` (row-wise Gustavson accumulation).
    pub fn matmul(&self, rhs: &Csr<T>) -> Csr<T> {
        assert_eq!(self.ncols, rhs.nrows, "inner dimensions differ");
        let n = rhs.ncols;
        let mut acc = vec![T::default(); n];
        let mut mark = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&j, &b) in rc.iter().zip(rv) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = T::default();
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if !acc[j].is_zero() {
                    indices.push(j);
                    values.push(acc[j]);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            values,
        }
    }

    /// Entrywise sum `self + rhs`.
    pub fn add(&self, rhs: &Csr<T>) -> Csr<T> {
        assert_eq!(self.shape(), rhs.shape(), "shapes differ");
        let rows = (0..self.nrows).map(|i| {
            let (ac, av) = self.row(i);
            let (bc, bv) = rhs.row(i);
            let mut out = Vec::with_capacity(ac.len() + bc.len());
            let (mut p, mut q) = (0, 0);
            while p < ac.len() || q < bc.len() {
                if q == bc.len() || (p < ac.len() && ac[p] < bc[q]) {
                    out.push((ac[p], av[p]));
                    p += 1;
                } else if p == ac.len() || bc[q] < ac[p] {
                    out.push((bc[q], bv[q]));
                    q += 1;
                } else {
                    out.push((ac[p], av[p] + bv[q]));
                    p += 1;
                    q += 1;
                }
            }
            out
        });
        Csr::from_rows(self.nrows, self.ncols, rows)
    }

    /// Returns `diag(left) * self * diag(right)`.
    pub fn scale(&self, left: Option<&[T]>, right: Option<&[T]>) -> Csr<T> {
        if let Some(l) = left {
            assert_eq!(l.len(), self.nrows);
        }
        if let Some(r) = right {
            assert_eq!(r.len(), self.ncols);
        }
        let rows = (0..self.nrows).map(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .map(|(&j, &v)| {
                    let mut x = v;
                    if let Some(l) = left {
                        x = l[i] * x;
                    }
                    if let Some(r) = right {
                        x = x * r[j];
                    }
                    (j, x)
                })
                .collect::<Vec<_>>()
        });
        Csr::from_rows(self.nrows, self.ncols, rows)
    }

    /// Keeps the listed rows and columns; `col_map[j]` is the new index of
    /// column `j`, or `None` to drop it. This realises `P_r A P_cᵀ` for
    /// selection matrices without forming them.
    pub fn restrict(&self, rows: &[usize], col_map: &[Option<usize>], ncols: usize) -> Csr<T> {
        assert_eq!(col_map.len(), self.ncols);
        let out_rows = rows.iter().map(|&i| {
            let (cols, vals) = self.row(i);
            let mut r: Vec<(usize, T)> = cols
                .iter()
                .zip(vals)
                .filter_map(|(&j, &v)| col_map[j].map(|jj| (jj, v)))
                .collect();
            r.sort_by_key(|e| e.0);
            r
        });
        Csr::from_rows(rows.len(), ncols, out_rows)
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }
}

impl Csr<f64> {
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn scaled(&self, alpha: f64) -> Csr<f64> {
        self.map(|v| alpha * v)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute row sum; bounds every eigenvalue of a symmetric matrix.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        self.add(&t.scaled(-1.0)).max_abs()
    }

    pub fn to_dense(&self) -> faer::Mat<f64> {
        let mut m = faer::Mat::<f64>::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn from_dense(m: faer::MatRef<'_, f64>, drop_below: f64) -> Csr<f64> {
        let rows = (0..m.nrows()).map(|i| {
            (0..m.ncols())
                .filter_map(|j| {
                    let v = m[(i, j)];
                    (v.abs() > drop_below).then_some((j, v))
                })
                .collect::<Vec<_>>()
        });
        Csr::from_rows(m.nrows(), m.ncols(), rows)
    }

    /// Coordinate text export: a `ROWS COLS NNZ` header, then one
    /// zero-based `i j value` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }

    pub fn read_coo<R: BufRead>(r: R) -> Result<Csr<f64>> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, message: &str| Error::Parse {
            line: line + 1,
            message: message.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
        let header = header.map_err(|e| parse_err(ln, &e.to_string()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(ln, "bad header field")))
            .collect::<Result<_>>()?;
        if h.len() != 3 {
            return Err(parse_err(ln, "header must be ROWS COLS NNZ"));
        }
        let mut trip = Vec::with_capacity(h[2]);
        for (ln, line) in lines {
            let line = line.map_err(|e| parse_err(ln, &e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(parse_err(ln, "expected `i j value`"));
            }
            let i: usize = f[0].parse().map_err(|_| parse_err(ln, "bad row"))?;
            let j: usize = f[1].parse().map_err(|_| parse_err(ln, "bad column"))?;
            let v: f64 = f[2].parse().map_err(|_| parse_err(ln, "bad value"))?;
            if i >= h[0] || j >= h[1] {
                return Err(parse_err(ln, "index out of range"));
            }
            trip.push((i, j, v));
        }
        if trip.len() != h[2] {
            return Err(parse_err(0, "entry count differs from header"));
        }
        Ok(Csr::from_triplets(h[0], h[1], &trip))
    }
}
