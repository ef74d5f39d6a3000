//! Exact reference solvers used to validate the approximate layers: max-flow
//! min-cut, exhaustive cut enumeration, the Hungarian method, exhaustive
//! matching, and a dense KKT solve by Gaussian elimination.

use std::collections::VecDeque;

use crate::error::{ensure_finite, Error, Result};
use crate::graph::{CutWeightField, GridGraph};
use crate::sparse::SparseMatrix;

/// A minimum s-t cut: its value and the source side of the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    pub value: f64,
    /// Membership per vertex (pixels, then `s`, then `t`).
    pub source_side: Vec<bool>,
}

impl CutResult {
    /// Pixel labels, `true` for the source side.
    pub fn pixel_labels(&self, g: &GridGraph) -> &[bool] {
        &self.source_side[..g.num_pixels()]
    }
}

/// Total weight of edges leaving the source side. Pixel labels only; `s` is
/// always on the source side and `t` never is.
pub fn cut_value(g: &GridGraph, w: &CutWeightField, pixel_on_source_side: &[bool]) -> f64 {
    let side = |v: usize| {
        if v == g.source() {
            true
        } else if v == g.terminal() {
            false
        } else {
            pixel_on_source_side[v]
        }
    };
    g.edges()
        .iter()
        .filter(|e| side(e.tail) && !side(e.head))
        .map(|e| w.edge_weight(g, e))
        .sum()
}

fn full_side(pixels: &[bool]) -> Vec<bool> {
    let mut side = pixels.to_vec();
    side.push(true);
    side.push(false);
    side
}

fn check_nonnegative(g: &GridGraph, w: &CutWeightField) -> Result<()> {
    if w.height() != g.height() || w.width() != g.width() {
        return Err(Error::DimensionMismatch("weight field does not match graph".into()));
    }
    ensure_finite(w.data(), "cut weights")?;
    for (e, edge) in g.edges().iter().enumerate() {
        let value = w.edge_weight(g, edge);
        if value < 0.0 {
            return Err(Error::NegativeWeight { edge: e, value });
        }
    }
    Ok(())
}

pub trait MinCutOracle {
    fn min_cut(&self, g: &GridGraph, w: &CutWeightField) -> Result<CutResult>;
}

pub trait MatchingOracle {
    fn assign(&self, cost: &[Vec<f64>]) -> Result<Assignment>;
}

/// Weights are scaled by 2²⁰ and rounded so augmenting paths run in exact
/// integer arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxFlow;

/// Exhaustive enumeration of pixel labelings, `H·W ≤ 16`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForceCut;

#[derive(Debug, Clone, Copy, Default)]
pub struct Hungarian;

/// Exhaustive permutation search, `k ≤ 8`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForceMatching;

impl MinCutOracle for MaxFlow {
    fn min_cut(&self, g: &GridGraph, w: &CutWeightField) -> Result<CutResult> {
        maxflow_mincut(g, w)
    }
}

impl MinCutOracle for BruteForceCut {
    fn min_cut(&self, g: &GridGraph, w: &CutWeightField) -> Result<CutResult> {
        brute_force_mincut(g, w)
    }
}

impl MatchingOracle for Hungarian {
    fn assign(&self, cost: &[Vec<f64>]) -> Result<Assignment> {
        hungarian(cost)
    }
}

impl MatchingOracle for BruteForceMatching {
    fn assign(&self, cost: &[Vec<f64>]) -> Result<Assignment> {
        brute_force_matching(cost)
    }
}

const FLOW_SCALE: f64 = (1u64 << 20) as f64;

struct FlowNetwork {
    head: Vec<usize>,
    cap: Vec<i64>,
    adjacency: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        Self {
            head: Vec::new(),
            cap: Vec::new(),
            adjacency: vec![Vec::new(); n],
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap: i64) {
        self.adjacency[u].push(self.head.len());
        self.head.push(v);
        self.cap.push(cap);
        self.adjacency[v].push(self.head.len());
        self.head.push(u);
        self.cap.push(0);
    }

    fn levels(&self, s: usize) -> Vec<Option<usize>> {
        let mut level = vec![None; self.adjacency.len()];
        level[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adjacency[u] {
                let v = self.head[e];
                if self.cap[e] > 0 && level[v].is_none() {
                    level[v] = Some(level[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn augment(&mut self, u: usize, t: usize, pushed: i64, level: &[Option<usize>], iter: &mut [usize]) -> i64 {
        if u == t {
            return pushed;
        }
        while iter[u] < self.adjacency[u].len() {
            let e = self.adjacency[u][iter[u]];
            let v = self.head[e];
            if self.cap[e] > 0 && level[v] == level[u].map(|l| l + 1) {
                let got = self.augment(v, t, pushed.min(self.cap[e]), level, iter);
                if got > 0 {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            iter[u] += 1;
        }
        0
    }

    /// Dinic's algorithm; returns the flow value.
    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut total = 0;
        loop {
            let level = self.levels(s);
            if level[t].is_none() {
                return total;
            }
            let mut iter = vec![0usize; self.adjacency.len()];
            loop {
                let f = self.augment(s, t, i64::MAX, &level, &mut iter);
                if f == 0 {
                    break;
                }
                total += f;
            }
        }
    }
}

/// Max-flow value in scaled integer units together with the cut. The source
/// side is the set reachable from `s` in the final residual graph.
pub fn maxflow_with_value(g: &GridGraph, w: &CutWeightField) -> Result<(i64, CutResult)> {
    check_nonnegative(g, w)?;
    let mut net = FlowNetwork::new(g.num_vertices());
    for edge in g.edges() {
        let cap = (w.edge_weight(g, edge) * FLOW_SCALE).round() as i64;
        net.add_edge(edge.tail, edge.head, cap);
    }
    let flow = net.max_flow(g.source(), g.terminal());
    let level = net.levels(g.source());
    let pixels: Vec<bool> = (0..g.num_pixels()).map(|v| level[v].is_some()).collect();
    Ok((
        flow,
        CutResult {
            value: cut_value(g, w, &pixels),
            source_side: full_side(&pixels),
        },
    ))
}

pub fn maxflow_mincut(g: &GridGraph, w: &CutWeightField) -> Result<CutResult> {
    maxflow_with_value(g, w).map(|(_, cut)| cut)
}

/// Cut capacity of a labeling in the same scaled integer units as
/// [`maxflow_with_value`].
pub fn scaled_cut_value(g: &GridGraph, w: &CutWeightField, pixels: &[bool]) -> i64 {
    let side = |v: usize| v == g.source() || (v < g.num_pixels() && pixels[v]);
    g.edges()
        .iter()
        .filter(|e| side(e.tail) && !side(e.head))
        .map(|e| (w.edge_weight(g, e) * FLOW_SCALE).round() as i64)
        .sum()
}

pub const BRUTE_FORCE_MAX_PIXELS: usize = 16;

/// Enumerates all `2^(H·W)` labelings. Among equal values the labeling with
/// the fewest source-side pixels wins (then the smallest bit pattern), which
/// coincides with the residual-reachable cut returned by [`maxflow_mincut`]
/// whenever the optimum is unique up to that rule.
pub fn brute_force_mincut(g: &GridGraph, w: &CutWeightField) -> Result<CutResult> {
    let n = g.num_pixels();
    if n > BRUTE_FORCE_MAX_PIXELS {
        return Err(Error::TooLarge(format!(
            "brute-force cut enumeration limited to {BRUTE_FORCE_MAX_PIXELS} pixels, got {n}"
        )));
    }
    check_nonnegative(g, w)?;
    let mut best: Option<(f64, u32, u32)> = None;
    let mut labels = vec![false; n];
    for mask in 0u32..(1u32 << n) {
        for (v, l) in labels.iter_mut().enumerate() {
            *l = mask >> v & 1 == 1;
        }
        let value = cut_value(g, w, &labels);
        let size = mask.count_ones();
        let better = match best {
            None => true,
            Some((bv, bs, _)) => value < bv || (value == bv && size < bs),
        };
        if better {
            best = Some((value, size, mask));
        }
    }
    let (value, _, mask) = best.expect("at least one labeling");
    let pixels: Vec<bool> = (0..n).map(|v| mask >> v & 1 == 1).collect();
    Ok(CutResult {
        value,
        source_side: full_side(&pixels),
    })
}

/// All cut values sorted ascending, for margin checks on small grids.
pub fn enumerate_cut_values(g: &GridGraph, w: &CutWeightField) -> Result<Vec<(f64, Vec<bool>)>> {
    let n = g.num_pixels();
    if n > BRUTE_FORCE_MAX_PIXELS {
        return Err(Error::TooLarge(format!("{n} pixels")));
    }
    let mut all: Vec<(f64, Vec<bool>)> = (0u32..(1u32 << n))
        .map(|mask| {
            let labels: Vec<bool> = (0..n).map(|v| mask >> v & 1 == 1).collect();
            (cut_value(g, w, &labels), labels)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(all)
}

/// A perfect matching: `permutation[row] = column`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

fn check_cost(cost: &[Vec<f64>]) -> Result<usize> {
    let k = cost.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    for row in cost {
        if row.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "cost matrix must be square, found a row of length {} for k = {k}",
                row.len()
            )));
        }
        ensure_finite(row, "cost matrix")?;
    }
    Ok(k)
}

fn assignment_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Optimal value of the assignment problem restricted to `rows × cols`,
/// by the shortest augmenting path method with potentials. Returns the
/// matching as `(value, row -> col)` in local indices.
fn hungarian_core(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (f64, Vec<usize>) {
    let n = rows.len();
    let inf = f64::INFINITY;
    let a = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let value = assign.iter().enumerate().map(|(i, &j)| a(i + 1, j + 1)).sum();
    (value, assign)
}

/// Minimum-cost perfect matching. Ties are resolved towards the
/// lexicographically smallest permutation: rows are fixed in order to the
/// smallest column that still admits an optimal completion.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let k = check_cost(cost)?;
    let all: Vec<usize> = (0..k).collect();
    let (optimum, assign) = hungarian_core(cost, &all, &all);
    let scale: f64 = cost.iter().flatten().map(|c| c.abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-9 * scale * k as f64;

    let mut permutation = Vec::with_capacity(k);
    let mut free_cols = all.clone();
    let mut fixed = 0.0;
    for i in 0..k {
        let rest_rows: Vec<usize> = (i + 1..k).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let rest = if rest_rows.is_empty() {
                0.0
            } else {
                hungarian_core(cost, &rest_rows, &rest_cols).0
            };
            if fixed + cost[i][j] + rest <= optimum + tol {
                chosen = Some(pos);
                break;
            }
        }
        // the optimal column from the first pass always qualifies
        let pos = chosen.unwrap_or_else(|| free_cols.iter().position(|&c| c == assign[i]).unwrap());
        let j = free_cols.remove(pos);
        fixed += cost[i][j];
        permutation.push(j);
    }
    Ok(Assignment {
        total_cost: assignment_cost(cost, &permutation),
        permutation,
    })
}

pub const BRUTE_FORCE_MAX_K: usize = 8;

/// Enumerates permutations in lexicographic order and keeps the first
/// strictly better one.
pub fn brute_force_matching(cost: &[Vec<f64>]) -> Result<Assignment> {
    let k = check_cost(cost)?;
    if k > BRUTE_FORCE_MAX_K {
        return Err(Error::TooLarge(format!(
            "brute-force matching limited to k <= {BRUTE_FORCE_MAX_K}, got {k}"
        )));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (assignment_cost(cost, &perm), perm.clone());
    while next_permutation(&mut perm) {
        let value = assignment_cost(cost, &perm);
        if value < best.0 {
            best = (value, perm.clone());
        }
    }
    Ok(Assignment {
        permutation: best.1,
        total_cost: best.0,
    })
}

/// All assignment costs sorted ascending (`k ≤ 8`).
pub fn enumerate_assignments(cost: &[Vec<f64>]) -> Result<Vec<(f64, Vec<usize>)>> {
    let k = check_cost(cost)?;
    if k > BRUTE_FORCE_MAX_K {
        return Err(Error::TooLarge(format!("k = {k}")));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut all = vec![(assignment_cost(cost, &perm), perm.clone())];
    while next_permutation(&mut perm) {
        all.push((assignment_cost(cost, &perm), perm.clone()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(all)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Row-major dense matrix used by the reference solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_sparse(a: &SparseMatrix) -> Self {
        Self {
            rows: a.rows(),
            cols: a.cols(),
            data: a.to_dense(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub const DENSE_KKT_MAX_DIM: usize = 2000;

/// LU factorization with partial pivoting, `P·M = L·U`, stored in place.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl DenseLu {
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        let n = m.rows;
        if m.cols != n {
            return Err(Error::DimensionMismatch("LU needs a square matrix".into()));
        }
        let mut a = m.data.clone();
        let mut pivots = Vec::with_capacity(n);
        let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap();
            if a[pivot * n + col].abs() <= 1e-13 * scale {
                return Err(Error::Singular(col));
            }
            pivots.push(pivot);
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                }
            }
            let d = a[col * n + col];
            let (top, bottom) = a.split_at_mut((col + 1) * n);
            let pivot_row = &top[col * n..];
            for row in bottom.chunks_exact_mut(n) {
                let f = row[col] / d;
                row[col] = f;
                if f != 0.0 {
                    for c in col + 1..n {
                        row[c] -= f * pivot_row[c];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, pivots })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch("right-hand side length".into()));
        }
        let mut x = rhs.to_vec();
        for (col, &p) in self.pivots.iter().enumerate() {
            x.swap(col, p);
        }
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] = (x[r] - s) / self.lu[r * n + r];
        }
        Ok(x)
    }
}

/// Solves a square system by Gaussian elimination with partial pivoting.
pub fn dense_solve(m: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != m.rows {
        return Err(Error::DimensionMismatch("dense_solve needs a square system".into()));
    }
    DenseLu::factor(m)?.solve(rhs)
}

/// Solves the full KKT system
///
/// ```text
/// [γI  Aᵀ] [−z]   [ c]
/// [A   0 ] [ λ] = [−b]
/// ```
///
/// directly and returns `(z, λ)`.
pub fn dense_kkt_solve(a: &DenseMatrix, gamma: f64, c: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (l, n) = (a.rows, a.cols);
    if c.len() != n || b.len() != l {
        return Err(Error::DimensionMismatch("dense_kkt_solve: vector lengths".into()));
    }
    let dim = n + l;
    if dim > DENSE_KKT_MAX_DIM {
        return Err(Error::TooLarge(format!("KKT dimension {dim} exceeds {DENSE_KKT_MAX_DIM}")));
    }
    let mut k = DenseMatrix::zeros(dim, dim);
    for i in 0..n {
        k.set(i, i, gamma);
    }
    for r in 0..l {
        for col in 0..n {
            let v = a.get(r, col);
            if v != 0.0 {
                k.set(col, n + r, v);
                k.set(n + r, col, v);
            }
        }
    }
    let rhs: Vec<f64> = c.iter().copied().chain(b.iter().map(|v| -v)).collect();
    let sol = dense_solve(&k, &rhs)?;
    let z = sol[..n].iter().map(|v| -v).collect();
    Ok((z, sol[n..].to_vec()))
}

/// Dense `C = (1/γ)(I − Aᵀ(AAᵀ)⁻¹A)`, with `AAᵀ` factored by [`DenseLu`].
pub fn dense_c_matrix(a: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    let (l, n) = (a.rows, a.cols);
    let mut s = DenseMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            s.set(i, j, (0..n).map(|k| a.get(i, k) * a.get(j, k)).sum());
        }
    }
    let lu = DenseLu::factor(&s)?;
    let mut out = DenseMatrix::zeros(n, n);
    for col in 0..n {
        let a_col: Vec<f64> = (0..l).map(|r| a.get(r, col)).collect();
        let y = lu.solve(&a_col)?;
        for row in 0..n {
            let proj: f64 = (0..l).map(|r| a.get(r, row) * y[r]).sum();
            let id = if row == col { 1.0 } else { 0.0 };
            out.set(row, col, (id - proj) / gamma);
        }
    }
    Ok(out)
}

/// `C·v` through a dense solve with `AAᵀ`.
pub fn dense_apply_c(a: &DenseMatrix, gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
    let (l, n) = (a.rows, a.cols);
    if v.len() != n {
        return Err(Error::DimensionMismatch("vector length".into()));
    }
    let mut s = DenseMatrix::zeros(l, l);
    for i in 0..l {
        for j in i..l {
            let value: f64 = (0..n).map(|k| a.get(i, k) * a.get(j, k)).sum();
            s.set(i, j, value);
            s.set(j, i, value);
        }
    }
    let y = dense_solve(&s, &a.matvec(v))?;
    Ok((0..n)
        .map(|i| {
            let proj: f64 = (0..l).map(|r| a.get(r, i) * y[r]).sum();
            (v[i] - proj) / gamma
        })
        .collect())
}
