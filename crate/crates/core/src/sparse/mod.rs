//! Compressed sparse row storage, products, and the sparse Cholesky machinery
//! used to factor `A·Aᵀ` for the KKT solves.

mod cholesky;
mod dense;
pub mod ordering;

pub use cholesky::{chol_factorize, chol_solve, CholeskyFactor, SymbolicCholesky};
pub use dense::DenseBatch;

use crate::error::{Error, Result};

/// Real sparse matrix in compressed row form.
///
/// Entries within a row are sorted by column and unique. Explicit zeros are
/// kept when they arise from summing duplicates, so the pattern of a matrix
/// assembled from a fixed triplet list does not depend on its values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols_tmp = vec![0usize; triplets.len()];
        let mut vals_tmp = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols_tmp[slot] = c;
            vals_tmp[slot] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..rows {
            order.clear();
            order.extend(counts[r]..counts[r + 1]);
            order.sort_by_key(|&k| cols_tmp[k]);
            for &k in &order {
                let c = cols_tmp[k];
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += vals_tmp[k];
                } else {
                    col_idx.push(c);
                    values.push(vals_tmp[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from raw CSR arrays, validating ordering and bounds.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 || col_idx.len() != values.len() {
            return Err(Error::DimensionMismatch("malformed CSR arrays".into()));
        }
        if *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::DimensionMismatch("row_ptr does not cover entries".into()));
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(Error::DimensionMismatch("row_ptr not monotone".into()));
            }
            let row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if row.iter().any(|&c| c >= cols) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::DimensionMismatch(format!(
                    "row {r} has unsorted, duplicate or out-of-range columns"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Row-major dense input; exact zeros are dropped.
    pub fn from_dense(rows: usize, cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "dense buffer of length {} for {rows}x{cols}",
                dense.len()
            )));
        }
        let triplets: Vec<_> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = dense[r * cols + c];
                (v != 0.0).then_some((r, c, v))
            })
            .collect();
        Self::from_triplets(rows, cols, &triplets)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over the `(col, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let slot = next[c];
                col_idx[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Number of stored entries per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.cols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        counts
    }

    /// Keeps only the columns for which `keep` is true (dimensions unchanged).
    pub fn filter_columns(&self, keep: &[bool]) -> Self {
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        row_ptr.push(0);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if keep[c] {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense copy of column `c`.
    pub fn column_dense(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &r in rows {
            if r >= self.rows {
                return Err(Error::DimensionMismatch(format!("row {r} out of range")));
            }
            for (c, v) in self.row(r) {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Fraction of stored entries over `rows·cols`.
    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
        }
    }

    pub(crate) fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub(crate) fn spmv_t_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
    }
}

/// `A·x`.
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.cols {
        return Err(Error::DimensionMismatch(format!(
            "spmv: x has length {}, matrix has {} columns",
            x.len(),
            a.cols
        )));
    }
    let mut y = vec![0.0; a.rows];
    a.spmv_into(x, &mut y);
    Ok(y)
}

/// `Aᵀ·x`.
pub fn spmv_t(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.rows {
        return Err(Error::DimensionMismatch(format!(
            "spmv_t: x has length {}, matrix has {} rows",
            x.len(),
            a.rows
        )));
    }
    let mut y = vec![0.0; a.cols];
    a.spmv_t_into(x, &mut y);
    Ok(y)
}

/// `A·Aᵀ`, returned with a full symmetric pattern.
pub fn gram(a: &SparseMatrix) -> SparseMatrix {
    let at = a.transpose();
    let n = a.rows;
    let mut acc = vec![0.0; n];
    let mut mark = vec![usize::MAX; n];
    let mut pattern: Vec<usize> = Vec::new();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        pattern.clear();
        for (k, aik) in a.row(i) {
            for (j, ajk) in at.row(k) {
                if mark[j] != i {
                    mark[j] = i;
                    acc[j] = 0.0;
                    pattern.push(j);
                }
                acc[j] += aik * ajk;
            }
        }
        pattern.sort_unstable();
        for &j in &pattern {
            col_idx.push(j);
            values.push(acc[j]);
        }
        row_ptr.push(col_idx.len());
    }
    SparseMatrix {
        rows: n,
        cols: n,
        row_ptr,
        col_idx,
        values,
    }
}
