//! Up-looking sparse Cholesky factorization `P·S·Pᵀ = L·Lᵀ`.
//!
//! The symbolic phase (ordering, elimination tree, column counts, and the
//! permuted upper-triangle gather map) is kept in [`SymbolicCholesky`] so a
//! matrix with the same pattern can be refactored without redoing it.

use std::sync::Arc;

use rayon::prelude::*;

use super::ordering::{invert, minimum_degree};
use super::{DenseBatch, SparseMatrix};
use crate::error::{Error, Result};

const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    dim: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    parent: Vec<Option<usize>>,
    /// Column pointers of `L` (diagonal stored first in each column).
    l_col_ptr: Vec<usize>,
    /// Upper triangle of `P·S·Pᵀ` by column: row indices and the position of
    /// each entry in the source matrix's value array.
    upper_ptr: Vec<usize>,
    upper_row: Vec<usize>,
    upper_src: Vec<usize>,
    /// Pattern fingerprint of the analysed matrix.
    source_row_ptr: Vec<usize>,
    source_col_idx: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyses the pattern of a symmetric matrix using a minimum degree ordering.
    pub fn analyze(s: &SparseMatrix) -> Result<Self> {
        check_square(s)?;
        let perm = minimum_degree(s);
        Self::analyze_with_ordering(s, perm)
    }

    /// Analyses the pattern of `s` under a caller-supplied ordering.
    pub fn analyze_with_ordering(s: &SparseMatrix, perm: Vec<usize>) -> Result<Self> {
        check_square(s)?;
        let n = s.rows();
        if perm.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "ordering of length {} for dimension {n}",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("ordering is not a permutation".into()));
            }
        }
        let inv_perm = invert(&perm);

        // gather the upper triangle of C = P S Pᵀ column by column:
        // column k of C holds rows i <= k, i.e. row perm[k] of S restricted
        let mut upper_ptr = Vec::with_capacity(n + 1);
        let mut upper_row = Vec::new();
        let mut upper_src = Vec::new();
        upper_ptr.push(0);
        let mut scratch: Vec<(usize, usize)> = Vec::new();
        for k in 0..n {
            let old = perm[k];
            scratch.clear();
            for idx in s.row_ptr()[old]..s.row_ptr()[old + 1] {
                let i = inv_perm[s.col_idx()[idx]];
                if i <= k {
                    scratch.push((i, idx));
                }
            }
            scratch.sort_unstable();
            for &(i, idx) in &scratch {
                upper_row.push(i);
                upper_src.push(idx);
            }
            upper_ptr.push(upper_row.len());
        }

        let parent = elimination_tree(n, &upper_ptr, &upper_row);

        let mut counts = vec![1usize; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let top = ereach(k, &upper_ptr, &upper_row, &parent, &mut mark, &mut stack);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        for &c in &counts {
            l_col_ptr.push(l_col_ptr.last().unwrap() + c);
        }

        Ok(Self {
            dim: n,
            perm,
            inv_perm,
            parent,
            l_col_ptr,
            upper_ptr,
            upper_row,
            upper_src,
            source_row_ptr: s.row_ptr().to_vec(),
            source_col_idx: s.col_idx().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `perm[k]` is the original row placed at position `k`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn etree(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Predicted number of stored entries of `L`, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        *self.l_col_ptr.last().unwrap()
    }

    /// Numeric factorization of a matrix with the analysed pattern.
    pub fn factorize(self: &Arc<Self>, s: &SparseMatrix) -> Result<CholeskyFactor> {
        if s.rows() != self.dim
            || s.row_ptr() != self.source_row_ptr.as_slice()
            || s.col_idx() != self.source_col_idx.as_slice()
        {
            return Err(Error::DimensionMismatch(
                "matrix pattern differs from the analysed pattern".into(),
            ));
        }
        let n = self.dim;
        let nnz = self.factor_nnz();
        let mut l_row = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut next: Vec<usize> = self.l_col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let values = s.values();

        for k in 0..n {
            let top = ereach(k, &self.upper_ptr, &self.upper_row, &self.parent, &mut mark, &mut stack);
            x[k] = 0.0;
            for idx in self.upper_ptr[k]..self.upper_ptr[k + 1] {
                x[self.upper_row[idx]] = values[self.upper_src[idx]];
            }
            let mut d = x[k];
            let scale = d.abs();
            x[k] = 0.0;
            for &i in &stack[top..] {
                let diag_pos = self.l_col_ptr[i];
                let lki = x[i] / l_val[diag_pos];
                x[i] = 0.0;
                for p in diag_pos + 1..next[i] {
                    x[l_row[p]] -= l_val[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                l_row[p] = k;
                l_val[p] = lki;
                next[i] += 1;
            }
            // pivots at rounding level relative to the diagonal mean rank deficiency
            if !(d > PIVOT_RTOL * scale) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: k,
                    original: self.perm[k],
                    value: d,
                });
            }
            let p = next[k];
            l_row[p] = k;
            l_val[p] = d.sqrt();
            next[k] += 1;
        }

        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            l_row,
            l_val,
        })
    }
}

fn check_square(s: &SparseMatrix) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(Error::DimensionMismatch(format!(
            "Cholesky needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    Ok(())
}

fn elimination_tree(n: usize, upper_ptr: &[usize], upper_row: &[usize]) -> Vec<Option<usize>> {
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for &row in &upper_row[upper_ptr[k]..upper_ptr[k + 1]] {
            let mut i = row;
            while i < k {
                let next = ancestor[i];
                ancestor[i] = Some(k);
                match next {
                    None => {
                        parent[i] = Some(k);
                        break;
                    }
                    Some(a) => i = a,
                }
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn ereach(
    k: usize,
    upper_ptr: &[usize],
    upper_row: &[usize],
    parent: &[Option<usize>],
    mark: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = k;
    for &row in &upper_row[upper_ptr[k]..upper_ptr[k + 1]] {
        let mut i = row;
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            match parent[i] {
                Some(p) => i = p,
                None => break,
            }
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Numeric Cholesky factor. `L` is stored by column with the diagonal first.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_row: Vec<usize>,
    l_val: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.dim
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn nnz(&self) -> usize {
        self.l_val.len()
    }

    /// The lower-triangular factor as a row-compressed matrix.
    pub fn lower(&self) -> SparseMatrix {
        let n = self.dim();
        let mut triplets = Vec::with_capacity(self.nnz());
        for j in 0..n {
            for p in self.symbolic.l_col_ptr[j]..self.symbolic.l_col_ptr[j + 1] {
                triplets.push((self.l_row[p], j, self.l_val[p]));
            }
        }
        SparseMatrix::from_triplets(n, n, &triplets).expect("factor indices in range")
    }

    /// `‖P·S·Pᵀ − L·Lᵀ‖_F / ‖S‖_F`.
    pub fn reconstruction_error(&self, s: &SparseMatrix) -> f64 {
        let n = self.dim();
        let l = self.lower();
        let cols = &self.symbolic.l_col_ptr;
        let inv = &self.symbolic.inv_perm;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut touched = Vec::new();
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..n {
            touched.clear();
            // (L Lᵀ)[i, j] = Σ_k L[i,k] L[j,k]
            for (k, lik) in l.row(i) {
                for p in cols[k]..cols[k + 1] {
                    let j = self.l_row[p];
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += lik * self.l_val[p];
                }
            }
            // (P S Pᵀ)[i, j] = S[perm[i], perm[j]]
            for (c, v) in s.row(self.symbolic.perm[i]) {
                let j = inv[c];
                norm2 += v * v;
                if mark[j] != i {
                    mark[j] = i;
                    acc[j] = 0.0;
                    touched.push(j);
                }
                acc[j] -= v;
            }
            diff2 += touched.iter().map(|&j| acc[j] * acc[j]).sum::<f64>();
        }
        if norm2 == 0.0 {
            diff2.sqrt()
        } else {
            (diff2 / norm2).sqrt()
        }
    }

    /// Solves `S·x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let mut work = vec![0.0; self.dim()];
        self.solve_with_work(b, &mut work);
    }

    fn solve_with_work(&self, b: &mut [f64], y: &mut [f64]) {
        let n = self.dim();
        let cols = &self.symbolic.l_col_ptr;
        let perm = &self.symbolic.perm;
        for k in 0..n {
            y[k] = b[perm[k]];
        }
        for j in 0..n {
            let start = cols[j];
            let yj = y[j] / self.l_val[start];
            y[j] = yj;
            if yj != 0.0 {
                for p in start + 1..cols[j + 1] {
                    y[self.l_row[p]] -= self.l_val[p] * yj;
                }
            }
        }
        for j in (0..n).rev() {
            let start = cols[j];
            let mut acc = y[j];
            for p in start + 1..cols[j + 1] {
                acc -= self.l_val[p] * y[self.l_row[p]];
            }
            y[j] = acc / self.l_val[start];
        }
        for k in 0..n {
            b[perm[k]] = y[k];
        }
    }

    /// Solves every column of `batch` in place; columns run in parallel.
    pub fn solve_batch_in_place(&self, batch: &mut DenseBatch) -> Result<()> {
        if batch.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "batch dimension {} for factor of dimension {}",
                batch.dim(),
                self.dim()
            )));
        }
        let n = self.dim();
        if n == 0 {
            return Ok(());
        }
        batch
            .values_mut()
            .par_chunks_mut(n)
            .for_each_init(|| vec![0.0; n], |work, col| self.solve_with_work(col, work));
        Ok(())
    }
}

/// Factors a symmetric positive definite matrix with a minimum degree ordering.
pub fn chol_factorize(s: &SparseMatrix) -> Result<CholeskyFactor> {
    let symbolic = Arc::new(SymbolicCholesky::analyze(s)?);
    symbolic.factorize(s)
}

/// Solves `S·X = B` column by column.
pub fn chol_solve(f: &CholeskyFactor, b: &DenseBatch) -> Result<DenseBatch> {
    let mut out = b.clone();
    f.solve_batch_in_place(&mut out)?;
    Ok(out)
}
