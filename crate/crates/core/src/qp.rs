//! Forward and backward passes of the regularized equality-constrained QP
//!
//! ```text
//! minimize ½γ‖z‖² + cᵀz   subject to   A·z = b
//! ```
//!
//! With `S = A·Aᵀ`, block elimination of the KKT system gives
//!
//! ```text
//! z = E·b − C·c,          C = (1/γ)(I − Aᵀ S⁻¹ A),   E = Aᵀ S⁻¹
//! λ = S⁻¹ (A·c + γ·b)     (so that Aᵀλ = γz + c)
//! ```
//!
//! and the gradient of a loss `l(z)` with respect to `c` is `−C·∇l(z)`.
//! Both reduce to one solve with `S` per right-hand side:
//! `u = S⁻¹(b + A·c/γ)`, `z = Aᵀu − c/γ`, `λ = γu`.
//!
//! `S` does not depend on γ, so one factorization serves every γ.
//!
//! Columns of `A` with many entries (the source and terminal potentials of a
//! cut program touch every source or terminal edge) would turn `S` into a
//! dense block. They are split off: `S = S₀ + D·Dᵀ`, `S₀` is factored
//! sparsely and `D` is folded back in with the Woodbury identity.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use crate::error::{ensure_finite, Error, Result};
use crate::sparse::{chol_factorize, gram, CholeskyFactor, DenseBatch, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on the scaled KKT residuals checked by [`QPSolution::check`].
    pub residual_tol: f64,
    /// Relative tolerance used by gradient checks.
    pub gradcheck_tol: f64,
    /// Run one residual-correction pass after each solve with `S`.
    pub refine: bool,
    /// Columns with more entries than this are treated as dense. `None`
    /// picks `max(32, 4·√rows)`.
    pub dense_column_threshold: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            gradcheck_tol: 1e-4,
            refine: false,
            dense_column_threshold: None,
        }
    }
}

/// Primal and dual solution of one program.
#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl QPSolution {
    /// `‖A·z − b‖ / max(1, ‖b‖)`.
    pub fn primal_residual(&self, a: &SparseMatrix, b: &[f64]) -> f64 {
        let mut az = vec![0.0; a.rows()];
        a.spmv_into(&self.z, &mut az);
        let r = norm(az.iter().zip(b).map(|(x, y)| x - y));
        r / norm(b.iter().copied()).max(1.0)
    }

    /// `‖Aᵀ·λ − γ·z − c‖ / max(1, ‖c‖)`.
    pub fn dual_residual(&self, a: &SparseMatrix, gamma: f64, c: &[f64]) -> f64 {
        let mut atl = vec![0.0; a.cols()];
        a.spmv_t_into(&self.lambda, &mut atl);
        let r = norm((0..a.cols()).map(|i| atl[i] - gamma * self.z[i] - c[i]));
        r / norm(c.iter().copied()).max(1.0)
    }
}

fn norm(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

/// Low-rank part `D·Dᵀ` of the Gram matrix, with `W = S₀⁻¹D` and the
/// Cholesky factor of the capacitance matrix `I + DᵀW` precomputed.
#[derive(Debug)]
struct LowRank {
    columns: Vec<usize>,
    d: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    capacitance: Vec<f64>,
}

impl LowRank {
    fn apply_correction(&self, y: &mut [f64]) {
        let r = self.d.len();
        let mut t: Vec<f64> = self.d.iter().map(|d| dot(d, y)).collect();
        // capacitance is r×r lower-triangular, row-major
        for i in 0..r {
            for j in 0..i {
                t[i] -= self.capacitance[i * r + j] * t[j];
            }
            t[i] /= self.capacitance[i * r + i];
        }
        for i in (0..r).rev() {
            for j in i + 1..r {
                t[i] -= self.capacitance[j * r + i] * t[j];
            }
            t[i] /= self.capacitance[i * r + i];
        }
        for (w, &ti) in self.w.iter().zip(&t) {
            for (yk, wk) in y.iter_mut().zip(w) {
                *yk -= wk * ti;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factorization of `A·Aᵀ` and the matrix it belongs to.
#[derive(Debug)]
struct Factored {
    a: SparseMatrix,
    factor: CholeskyFactor,
    sparse_part: SparseMatrix,
    low_rank: Option<LowRank>,
    key: u64,
}

impl Factored {
    fn new(a: &SparseMatrix, options: &SolverOptions) -> Result<Self> {
        let l = a.rows();
        let threshold = options
            .dense_column_threshold
            .unwrap_or_else(|| 32usize.max((4.0 * (l as f64).sqrt()).ceil() as usize));
        let counts = a.column_counts();
        let dense: Vec<usize> = (0..a.cols()).filter(|&c| counts[c] > threshold).collect();

        let sparse_part = if dense.is_empty() {
            gram(a)
        } else {
            let mut keep = vec![true; a.cols()];
            for &c in &dense {
                keep[c] = false;
            }
            gram(&a.filter_columns(&keep))
        };
        let factor = chol_factorize(&sparse_part)?;

        let low_rank = if dense.is_empty() {
            None
        } else {
            let d: Vec<Vec<f64>> = dense.iter().map(|&c| a.column_dense(c)).collect();
            let mut batch = DenseBatch::from_columns(&d)?;
            factor.solve_batch_in_place(&mut batch)?;
            let w: Vec<Vec<f64>> = batch.columns().map(<[f64]>::to_vec).collect();
            let r = d.len();
            let mut cap = vec![0.0; r * r];
            for i in 0..r {
                for j in 0..r {
                    cap[i * r + j] = dot(&d[i], &w[j]) + if i == j { 1.0 } else { 0.0 };
                }
            }
            let capacitance = dense_cholesky(&cap, r)?;
            Some(LowRank {
                columns: dense,
                d,
                w,
                capacitance,
            })
        };

        Ok(Self {
            a: a.clone(),
            factor,
            sparse_part,
            low_rank,
            key: pattern_key(a),
        })
    }

    fn solve_gram_batch(&self, batch: &mut DenseBatch, refine: bool) -> Result<()> {
        let original = refine.then(|| batch.clone());
        self.factor.solve_batch_in_place(batch)?;
        if let Some(lr) = &self.low_rank {
            for j in 0..batch.count() {
                lr.apply_correction(batch.column_mut(j));
            }
        }
        if let Some(rhs) = original {
            let mut correction = DenseBatch::zeros(batch.dim(), batch.count());
            let mut at_x = vec![0.0; self.a.cols()];
            let mut s_x = vec![0.0; self.a.rows()];
            for j in 0..batch.count() {
                self.a.spmv_t_into(batch.column(j), &mut at_x);
                self.a.spmv_into(&at_x, &mut s_x);
                for ((out, r), sx) in correction.column_mut(j).iter_mut().zip(rhs.column(j)).zip(&s_x) {
                    *out = r - sx;
                }
            }
            self.solve_gram_batch(&mut correction, false)?;
            for (x, dx) in batch.values_mut().iter_mut().zip(correction.values()) {
                *x += dx;
            }
        }
        Ok(())
    }
}

/// Dense Cholesky of a small SPD matrix (row-major), lower factor.
fn dense_cholesky(m: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite {
                        index: i,
                        original: i,
                        value: s,
                    });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn pattern_key(a: &SparseMatrix) -> u64 {
    let mut h = DefaultHasher::new();
    (a.rows(), a.cols()).hash(&mut h);
    a.row_ptr().hash(&mut h);
    a.col_idx().hash(&mut h);
    for v in a.values() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Precomputed KKT machinery for one constraint matrix and one γ.
///
/// Cloning is cheap: the factorization is shared.
#[derive(Debug, Clone)]
pub struct KKTSystem {
    inner: Arc<Factored>,
    gamma: f64,
    options: SolverOptions,
}

impl KKTSystem {
    pub fn prepare(a: &SparseMatrix, gamma: f64) -> Result<Self> {
        Self::prepare_with(a, gamma, SolverOptions::default())
    }

    pub fn prepare_with(a: &SparseMatrix, gamma: f64, options: SolverOptions) -> Result<Self> {
        check_gamma(gamma)?;
        ensure_finite(a.values(), "constraint matrix")?;
        Ok(Self {
            inner: Arc::new(Factored::new(a, &options)?),
            gamma,
            options,
        })
    }

    /// Same factorization, different γ.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            inner: Arc::clone(&self.inner),
            gamma,
            options: self.options,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.inner.a
    }

    /// Hash of the constraint matrix; identical matrices share a key.
    pub fn cache_key(&self) -> u64 {
        self.inner.key
    }

    /// Cholesky factor of the sparse part of `A·Aᵀ`.
    pub fn factor(&self) -> &CholeskyFactor {
        &self.inner.factor
    }

    /// The matrix behind [`Self::factor`]: `A·Aᵀ` without the dense columns.
    pub fn factored_matrix(&self) -> &SparseMatrix {
        &self.inner.sparse_part
    }

    /// Columns of `A` handled through the low-rank correction.
    pub fn dense_columns(&self) -> &[usize] {
        self.inner.low_rank.as_ref().map_or(&[], |lr| lr.columns.as_slice())
    }

    pub fn num_variables(&self) -> usize {
        self.inner.a.cols()
    }

    pub fn num_constraints(&self) -> usize {
        self.inner.a.rows()
    }

    /// Solves `A·Aᵀ·x = y` for every column of `batch`.
    pub fn solve_gram(&self, batch: &mut DenseBatch) -> Result<()> {
        self.inner.solve_gram_batch(batch, self.options.refine)
    }

    fn check_len(&self, what: &str, len: usize, expected: usize) -> Result<()> {
        if len != expected {
            return Err(Error::DimensionMismatch(format!(
                "{what} has length {len}, expected {expected}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, c: &[f64], b: &[f64]) -> Result<QPSolution> {
        let batch = DenseBatch::new(c.len(), 1, c.to_vec())?;
        Ok(self.forward_batch(&batch, b)?.pop().expect("one column"))
    }

    /// Solves one program per column of `costs`, all sharing `b`.
    pub fn forward_batch(&self, costs: &DenseBatch, b: &[f64]) -> Result<Vec<QPSolution>> {
        let (n, l) = (self.num_variables(), self.num_constraints());
        self.check_len("objective", costs.dim(), n)?;
        self.check_len("right-hand side", b.len(), l)?;
        ensure_finite(costs.values(), "objective")?;
        ensure_finite(b, "right-hand side")?;
        let a = &self.inner.a;
        let inv_gamma = 1.0 / self.gamma;

        let mut rhs = DenseBatch::zeros(l, costs.count());
        for j in 0..costs.count() {
            let out = rhs.column_mut(j);
            a.spmv_into(costs.column(j), out);
            for (o, bi) in out.iter_mut().zip(b) {
                *o = bi + *o * inv_gamma;
            }
        }
        self.solve_gram(&mut rhs)?;

        Ok((0..costs.count())
            .map(|j| {
                let u = rhs.column(j);
                let mut z = vec![0.0; n];
                a.spmv_t_into(u, &mut z);
                for (zi, ci) in z.iter_mut().zip(costs.column(j)) {
                    *zi -= ci * inv_gamma;
                }
                let lambda = u.iter().map(|v| v * self.gamma).collect();
                QPSolution { z, lambda }
            })
            .collect())
    }

    /// `C·v = (1/γ)(v − Aᵀ (A·Aᵀ)⁻¹ A·v)`.
    pub fn apply_c(&self, v: &[f64]) -> Result<Vec<f64>> {
        let batch = DenseBatch::new(v.len(), 1, v.to_vec())?;
        Ok(self.apply_c_batch(&batch)?.column(0).to_vec())
    }

    pub fn apply_c_batch(&self, v: &DenseBatch) -> Result<DenseBatch> {
        let (n, l) = (self.num_variables(), self.num_constraints());
        self.check_len("vector", v.dim(), n)?;
        ensure_finite(v.values(), "vector")?;
        let a = &self.inner.a;
        let mut av = DenseBatch::zeros(l, v.count());
        for j in 0..v.count() {
            a.spmv_into(v.column(j), av.column_mut(j));
        }
        self.solve_gram(&mut av)?;
        let inv_gamma = 1.0 / self.gamma;
        let mut out = DenseBatch::zeros(n, v.count());
        for j in 0..v.count() {
            let col = out.column_mut(j);
            a.spmv_t_into(av.column(j), col);
            for (o, vi) in col.iter_mut().zip(v.column(j)) {
                *o = (vi - *o) * inv_gamma;
            }
        }
        Ok(out)
    }

    /// Gradient with respect to `c` given the gradient with respect to `z`.
    pub fn backward(&self, grad_z: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.apply_c(grad_z)?;
        g.iter_mut().for_each(|v| *v = -*v);
        Ok(g)
    }

    pub fn backward_batch(&self, grad_z: &DenseBatch) -> Result<DenseBatch> {
        let mut g = self.apply_c_batch(grad_z)?;
        g.values_mut().iter_mut().for_each(|v| *v = -*v);
        Ok(g)
    }

    /// Scaled KKT residuals `(primal, dual)` of a solution.
    pub fn residuals(&self, sol: &QPSolution, c: &[f64], b: &[f64]) -> (f64, f64) {
        (
            sol.primal_residual(&self.inner.a, b),
            sol.dual_residual(&self.inner.a, self.gamma, c),
        )
    }

    /// Whether both residuals are within [`SolverOptions::residual_tol`].
    pub fn check(&self, sol: &QPSolution, c: &[f64], b: &[f64]) -> bool {
        let (p, d) = self.residuals(sol, c, b);
        p <= self.options.residual_tol && d <= self.options.residual_tol
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")))
    }
}

/// Factorizations keyed by constraint matrix, shared across γ.
#[derive(Debug, Default)]
pub struct KKTCache {
    entries: Mutex<HashMap<u64, Arc<Factored>>>,
}

impl KKTCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prepare(&self, a: &SparseMatrix, gamma: f64) -> Result<KKTSystem> {
        check_gamma(gamma)?;
        let key = pattern_key(a);
        if let Some(found) = self.entries.lock().unwrap().get(&key) {
            if found.a == *a {
                return Ok(KKTSystem {
                    inner: Arc::clone(found),
                    gamma,
                    options: SolverOptions::default(),
                });
            }
        }
        let system = KKTSystem::prepare(a, gamma)?;
        self.entries
            .lock()
            .unwrap()
            .insert(key, Arc::clone(&system.inner));
        Ok(system)
    }
}
