//! k-way partition masks from parallel cut programs, mask composition, slot
//! pooling, and slot matching through a regularized matching program.
//!
//! Conventions: mask `i` comes from cut `i`, and a pixel scores high in it
//! when the cut places it on the source side. In a two-way foreground split
//! mask 0 is the foreground.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::graph::{cut_constraints, cut_index_map, cut_objective, objective_grad_to_field, CutWeightField, GridGraph, VarTag};
use crate::oracles::hungarian;
use crate::qp::{KKTCache, KKTSystem, QPSolution};
use crate::sparse::{DenseBatch, SparseMatrix};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_FOREGROUND_TAU: f64 = 0.5;
pub const DEFAULT_MATCH_TAU: f64 = 0.1;
pub const DEFAULT_MATCH_GAMMA: f64 = 0.1;

fn shared_cache() -> &'static KKTCache {
    static CACHE: OnceLock<KKTCache> = OnceLock::new();
    CACHE.get_or_init(KKTCache::new)
}

/// `k` soft masks over an `H×W` grid, stored mask-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMasks {
    k: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PartitionMasks {
    pub fn new(k: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} mask values for {k}x{height}x{width}",
                data.len()
            )));
        }
        ensure_finite(&data, "masks")?;
        Ok(Self { k, height, width, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self, i: usize) -> &[f64] {
        let p = self.num_pixels();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, row: usize, col: usize) -> f64 {
        self.data[(i * self.height + row) * self.width + col]
    }

    /// Per-pixel index of the largest mask; ties go to the lower index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.num_pixels())
            .map(|p| {
                (1..self.k).fold(0, |best, i| {
                    if self.mask(i)[p] > self.mask(best)[p] {
                        i
                    } else {
                        best
                    }
                })
            })
            .collect()
    }

    /// Largest deviation of a per-pixel sum from one.
    pub fn max_sum_error(&self) -> f64 {
        (0..self.num_pixels())
            .map(|p| ((0..self.k).map(|i| self.mask(i)[p]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_grid(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::DimensionMismatch(format!(
                "masks are {}x{}, expected {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Temperature softmax across `k` logit maps, pixel by pixel.
pub fn softmax_masks(logits: &[Vec<f64>], height: usize, width: usize, tau: f64) -> Result<PartitionMasks> {
    check_tau(tau)?;
    let k = logits.len();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one partition".into()));
    }
    let p = height * width;
    for z in logits {
        if z.len() != p {
            return Err(Error::DimensionMismatch(format!("logit map of length {} for {p} pixels", z.len())));
        }
        ensure_finite(z, "logits")?;
    }
    let mut data = vec![0.0; k * p];
    for px in 0..p {
        let max = logits.iter().map(|z| z[px]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..k {
            let e = ((logits[i][px] - max) / tau).exp();
            data[i * p + px] = e;
            total += e;
        }
        for i in 0..k {
            data[i * p + px] /= total;
        }
    }
    PartitionMasks::new(k, height, width, data)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")))
    }
}

/// The cut program of one grid shape, ready for batched solves.
#[derive(Debug, Clone)]
pub struct CutLayer {
    graph: GridGraph,
    b: Vec<f64>,
    kkt: KKTSystem,
    pixel_index: Vec<usize>,
}

impl CutLayer {
    /// Factorizations are shared process-wide between layers of one shape.
    pub fn new(height: usize, width: usize, gamma: f64) -> Result<Self> {
        let graph = GridGraph::new(height, width)?;
        let (a, b) = cut_constraints(&graph);
        let kkt = shared_cache().prepare(&a, gamma)?;
        Ok(Self::from_parts(graph, b, kkt))
    }

    /// A layer with a private factorization.
    pub fn uncached(height: usize, width: usize, gamma: f64) -> Result<Self> {
        let graph = GridGraph::new(height, width)?;
        let (a, b) = cut_constraints(&graph);
        let kkt = KKTSystem::prepare(&a, gamma)?;
        Ok(Self::from_parts(graph, b, kkt))
    }

    fn from_parts(graph: GridGraph, b: Vec<f64>, kkt: KKTSystem) -> Self {
        let pixels = graph.num_pixels();
        let mut pixel_index = vec![0; pixels];
        for (pos, tag) in cut_index_map(&graph).into_iter().enumerate() {
            if let VarTag::Potential(v) = tag {
                if v < pixels {
                    pixel_index[v] = pos;
                }
            }
        }
        Self { graph, b, kkt, pixel_index }
    }

    pub fn graph(&self) -> &GridGraph {
        &self.graph
    }

    pub fn kkt(&self) -> &KKTSystem {
        &self.kkt
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn gamma(&self) -> f64 {
        self.kkt.gamma()
    }

    fn check_fields(&self, weights: &[CutWeightField]) -> Result<()> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("need at least one weight field".into()));
        }
        for w in weights {
            if w.height() != self.graph.height() || w.width() != self.graph.width() {
                return Err(Error::DimensionMismatch(format!(
                    "weight field {}x{} on a {}x{} layer",
                    w.height(),
                    w.width(),
                    self.graph.height(),
                    self.graph.width()
                )));
            }
        }
        Ok(())
    }

    /// Full solutions, one per field, from a single batched solve.
    pub fn solve(&self, weights: &[CutWeightField]) -> Result<Vec<QPSolution>> {
        self.check_fields(weights)?;
        let costs: Vec<Vec<f64>> = weights
            .iter()
            .map(|w| cut_objective(&self.graph, w))
            .collect::<Result<_>>()?;
        self.kkt.forward_batch(&DenseBatch::from_columns(&costs)?, &self.b)
    }

    /// Pixel potentials per field, row-major.
    pub fn vertex_vars(&self, weights: &[CutWeightField]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .solve(weights)?
            .iter()
            .map(|sol| self.pixel_index.iter().map(|&i| sol.z[i]).collect())
            .collect())
    }

    pub fn masks(&self, weights: &[CutWeightField], tau: f64) -> Result<PartitionMasks> {
        let z = self.vertex_vars(weights)?;
        softmax_masks(&z, self.graph.height(), self.graph.width(), tau)
    }

    /// Gradients with respect to each weight field given gradients with
    /// respect to each field's pixel potentials.
    pub fn backward_vertex(&self, grad_pixels: &[Vec<f64>]) -> Result<Vec<CutWeightField>> {
        let n = self.kkt.num_variables();
        let mut grad_z = DenseBatch::zeros(n, grad_pixels.len());
        for (j, g) in grad_pixels.iter().enumerate() {
            if g.len() != self.pixel_index.len() {
                return Err(Error::DimensionMismatch(format!(
                    "pixel gradient of length {} for {} pixels",
                    g.len(),
                    self.pixel_index.len()
                )));
            }
            let col = grad_z.column_mut(j);
            for (&i, &v) in self.pixel_index.iter().zip(g) {
                col[i] = v;
            }
        }
        let grad_c = self.kkt.backward_batch(&grad_z)?;
        grad_c
            .columns()
            .map(|g| objective_grad_to_field(&self.graph, g))
            .collect()
    }
}

/// Solves one cut per field on a shared factorization and normalizes the
/// pixel potentials with a temperature softmax across cuts.
pub fn k_partition_masks(weights: &[CutWeightField], gamma: f64, tau: f64) -> Result<PartitionMasks> {
    check_tau(tau)?;
    let first = weights
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one weight field".into()))?;
    CutLayer::new(first.height(), first.width(), gamma)?.masks(weights, tau)
}

/// `C×H×W` features, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        ensure_finite(&data, "features")?;
        Ok(Self { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    /// Appends two channels holding `row/H` and `col/W`.
    pub fn with_position_encoding(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = self.data.clone();
        data.extend((0..h * w).map(|p| (p / w) as f64 / h as f64));
        data.extend((0..h * w).map(|p| (p % w) as f64 / w as f64));
        Self {
            channels: self.channels + 2,
            height: h,
            width: w,
            data,
        }
    }
}

/// `r_i[c,h,w] = m_i[h,w]·x[c,h,w]` for every mask.
pub fn apply_masks(m: &PartitionMasks, x: &FeatureMap) -> Result<Vec<FeatureMap>> {
    m.check_same_grid(x.height, x.width)?;
    let p = m.num_pixels();
    Ok((0..m.k)
        .map(|i| {
            let mask = m.mask(i);
            let data = x
                .data
                .chunks(p.max(1))
                .take(x.channels)
                .flat_map(|ch| ch.iter().zip(mask).map(|(v, w)| v * w))
                .collect();
            FeatureMap {
                channels: x.channels,
                height: x.height,
                width: x.width,
                data,
            }
        })
        .collect())
}

/// `[bg, fg·obj₁, …, fg·obj_{k−1}]` where `fg` is mask 0 of a two-way split.
pub fn background_composition(fg: &PartitionMasks, obj: &PartitionMasks) -> Result<PartitionMasks> {
    if fg.k != 2 {
        return Err(Error::InvalidArgument(format!("foreground split must have k = 2, got {}", fg.k)));
    }
    obj.check_same_grid(fg.height, fg.width)?;
    let p = fg.num_pixels();
    let (mask_fg, mask_bg) = (fg.mask(0), fg.mask(1));
    let mut data = mask_bg.to_vec();
    for i in 0..obj.k {
        data.extend(obj.mask(i).iter().zip(mask_fg).map(|(o, f)| o * f));
    }
    debug_assert_eq!(data.len(), (obj.k + 1) * p);
    PartitionMasks::new(obj.k + 1, fg.height, fg.width, data)
}

/// `k` slot vectors of dimension `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSet {
    pub slots: Vec<Vec<f64>>,
}

impl SlotSet {
    pub fn new(slots: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = slots.first() {
            for s in &slots {
                if s.len() != first.len() {
                    return Err(Error::DimensionMismatch("slots of unequal dimension".into()));
                }
                ensure_finite(s, "slots")?;
            }
        }
        Ok(Self { slots })
    }

    pub fn k(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }
}

/// Spatial mean of every channel of every masked map. The slot transform is
/// the identity.
pub fn pool_slots(masked: &[FeatureMap]) -> SlotSet {
    SlotSet {
        slots: masked
            .iter()
            .map(|r| {
                let p = (r.height * r.width) as f64;
                (0..r.channels).map(|c| r.channel(c).iter().sum::<f64>() / p).collect()
            })
            .collect(),
    }
}

/// `c[i][j] = −⟨s_i, t_j⟩`.
pub fn slot_costs(s: &SlotSet, t: &SlotSet) -> Result<Vec<Vec<f64>>> {
    if s.k() != t.k() || s.dim() != t.dim() {
        return Err(Error::DimensionMismatch(format!(
            "slot sets {}x{} and {}x{}",
            s.k(),
            s.dim(),
            t.k(),
            t.dim()
        )));
    }
    Ok(s.slots
        .iter()
        .map(|si| t.slots.iter().map(|tj| -si.iter().zip(tj).map(|(a, b)| a * b).sum::<f64>()).collect())
        .collect())
}

/// Regularized matching program on the complete bipartite graph `K_{k,k}`:
///
/// ```text
/// minimize  Σ c_uv d_uv + γ(Σ d² + Σ p² + Σ s²)
/// subject to  p_u + d_uv + s_u = 1,  p_v + d_uv + s_v = 1   for every edge (u, v)
/// ```
///
/// Variables are laid out as `[p_u (k) | p_v (k) | d (k², row-major) | s_u (k) | s_v (k)]`.
/// Rows are every `u`-side constraint in edge order, then every `v`-side one.
///
/// These rows are linearly dependent for `k ≥ 2` (rank `k² + 2k − 1` out of
/// `2k²`), so [`MatchQP::solve`] works on an independent subset of rows
/// spanning the same space. The right-hand side is consistent, so the
/// feasible set and the solution are unchanged.
#[derive(Debug, Clone)]
pub struct MatchQP {
    pub k: usize,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub gamma: f64,
    independent_rows: Vec<usize>,
}

impl MatchQP {
    pub fn num_variables(&self) -> usize {
        self.a.cols()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.rows()
    }

    pub fn edge_var(&self, i: usize, j: usize) -> usize {
        2 * self.k + i * self.k + j
    }

    pub fn independent_rows(&self) -> &[usize] {
        &self.independent_rows
    }

    /// Solution of the program. Multipliers of the dropped rows are zero.
    pub fn solve(&self) -> Result<QPSolution> {
        let reduced = self.a.select_rows(&self.independent_rows)?;
        let b: Vec<f64> = self.independent_rows.iter().map(|&r| self.b[r]).collect();
        // the quadratic term γ‖z‖² is ½(2γ)‖z‖²
        let kkt = KKTSystem::prepare(&reduced, 2.0 * self.gamma)?;
        let sol = kkt.forward(&self.c, &b)?;
        let mut lambda = vec![0.0; self.a.rows()];
        for (&r, &v) in self.independent_rows.iter().zip(&sol.lambda) {
            lambda[r] = v;
        }
        Ok(QPSolution { z: sol.z, lambda })
    }

    /// The `k×k` block of edge variables.
    pub fn edge_matrix(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| z[self.edge_var(i, j)]).collect())
            .collect()
    }
}

pub fn assemble_matching_qp(cost: &[Vec<f64>], gamma: f64) -> Result<MatchQP> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let k = cost.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    for row in cost {
        if row.len() != k {
            return Err(Error::DimensionMismatch(format!("cost row of length {} for k = {k}", row.len())));
        }
        ensure_finite(row, "cost matrix")?;
    }
    let n = 2 * k + k * k + 2 * k;
    let (pu, pv, d, su, sv) = (0, k, 2 * k, 2 * k + k * k, 3 * k + k * k);
    let mut triplets = Vec::with_capacity(6 * k * k);
    for i in 0..k {
        for j in 0..k {
            let r = i * k + j;
            triplets.extend([(r, pu + i, 1.0), (r, d + r, 1.0), (r, su + i, 1.0)]);
        }
    }
    for i in 0..k {
        for j in 0..k {
            let r = k * k + i * k + j;
            triplets.extend([(r, pv + j, 1.0), (r, d + i * k + j, 1.0), (r, sv + j, 1.0)]);
        }
    }
    let a = SparseMatrix::from_triplets(2 * k * k, n, &triplets)?;
    let mut c = vec![0.0; n];
    for i in 0..k {
        for j in 0..k {
            c[d + i * k + j] = cost[i][j];
        }
    }
    // every u-side row, plus the v-side rows of edges (0, j) and (i, 0)
    let mut independent_rows: Vec<usize> = (0..k * k).collect();
    independent_rows.extend((0..k).map(|j| k * k + j));
    independent_rows.extend((1..k).map(|i| k * k + i * k));
    Ok(MatchQP {
        k,
        a,
        b: vec![1.0; 2 * k * k],
        c,
        gamma,
        independent_rows,
    })
}

/// Row-stochastic soft assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchMatrix {
    pub m: Vec<Vec<f64>>,
}

impl MatchMatrix {
    /// Column of the largest entry per row; ties go to the lower column.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.m
            .iter()
            .map(|row| (1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
            .collect()
    }
}

fn row_softmax(rows: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| ((v - max) / tau).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

/// Soft matching from a cost matrix: solves the matching program and
/// softmaxes each row of edge variables.
pub fn match_costs(cost: &[Vec<f64>], gamma: f64, tau: f64) -> Result<MatchMatrix> {
    check_tau(tau)?;
    let qp = assemble_matching_qp(cost, gamma)?;
    let sol = qp.solve()?;
    Ok(MatchMatrix {
        m: row_softmax(&qp.edge_matrix(&sol.z), tau),
    })
}

/// Matches `S` to `T` with costs `−⟨s_i, t_j⟩` and returns the paired slots
/// `r_i = Σ_j M[i][j]·t_j`.
pub fn match_slots(s: &SlotSet, t: &SlotSet, gamma: f64, tau: f64) -> Result<(MatchMatrix, SlotSet)> {
    let cost = slot_costs(s, t)?;
    let m = match_costs(&cost, gamma, tau)?;
    let dim = t.dim();
    let paired = m
        .m
        .iter()
        .map(|row| {
            let mut r = vec![0.0; dim];
            for (w, tj) in row.iter().zip(&t.slots) {
                for (ri, v) in r.iter_mut().zip(tj) {
                    *ri += w * v;
                }
            }
            r
        })
        .collect();
    Ok((m, SlotSet { slots: paired }))
}

/// Soft matching, its row-argmax, and the Hungarian assignment of the same costs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchComparison {
    pub m: MatchMatrix,
    pub argmax: Vec<usize>,
    pub hungarian: Vec<usize>,
    pub agree: bool,
}

pub fn compare_with_hungarian(cost: &[Vec<f64>], gamma: f64, tau: f64) -> Result<MatchComparison> {
    let m = match_costs(cost, gamma, tau)?;
    let argmax = m.row_argmax();
    let exact = hungarian(cost)?.permutation;
    Ok(MatchComparison {
        agree: argmax == exact,
        m,
        argmax,
        hungarian: exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{assemble_cut_qp, extract_vertex_vars, EdgeKind};
    use crate::oracles::{dense_kkt_solve, DenseMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CutWeightField {
        CutWeightField::from_fn(h, w, |_, _, _| rng.gen_range(0.0..2.0))
    }

    #[test]
    fn single_partition_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_field(&mut rng, 3, 4);
        let m = k_partition_masks(&[w], 0.5, 0.1).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_pixel_opposing_cuts_match_dense_pipeline() {
        let strong = |first_source: bool| {
            CutWeightField::from_fn(2, 1, |kind, r, _| {
                let near_source = (r == 0) == first_source;
                match kind {
                    EdgeKind::FromSource => if near_source { 5.0 } else { 0.1 },
                    EdgeKind::ToTerminal => if near_source { 0.1 } else { 5.0 },
                    _ => 0.1,
                }
            })
        };
        let weights = [strong(true), strong(false)];
        let (gamma, tau) = (0.5, 0.1);
        let masks = k_partition_masks(&weights, gamma, tau).unwrap();

        let g = GridGraph::new(2, 1).unwrap();
        let logits: Vec<Vec<f64>> = weights
            .iter()
            .map(|w| {
                let qp = assemble_cut_qp(&g, w, gamma).unwrap();
                let (z, _) = dense_kkt_solve(&DenseMatrix::from_sparse(&qp.a), gamma, &qp.c, &qp.b).unwrap();
                extract_vertex_vars(&qp, &z).unwrap()
            })
            .collect();
        let expected = softmax_masks(&logits, 2, 1, tau).unwrap();
        for (a, b) in masks.data().iter().zip(expected.data()) {
            assert!((a - b).abs() <= 1e-8);
        }
        assert!(masks.get(0, 0, 0) > masks.get(0, 1, 0));
        assert!(masks.get(1, 1, 0) > masks.get(1, 0, 0));
    }

    #[test]
    fn softmax_shift_invariance_and_errors() {
        let z = vec![vec![0.1, 0.5], vec![0.3, -0.2]];
        let shifted: Vec<Vec<f64>> = z.iter().map(|r| vec![r[0] + 3.0, r[1]]).collect();
        let a = softmax_masks(&z, 1, 2, 0.1).unwrap();
        let b = softmax_masks(&shifted, 1, 2, 0.1).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!(softmax_masks(&z, 1, 2, 0.0).is_err());
        assert!(softmax_masks(&[], 1, 2, 0.1).is_err());
        assert!(softmax_masks(&z, 2, 2, 0.1).is_err());
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let a = CutWeightField::constant(2, 2, 1.0);
        let b = CutWeightField::constant(2, 3, 1.0);
        assert!(matches!(k_partition_masks(&[a, b], 0.5, 0.1), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn apply_masks_cases() {
        let x = FeatureMap::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = PartitionMasks::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(apply_masks(&ones, &x).unwrap()[0], x);
        let zeros = PartitionMasks::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(apply_masks(&zeros, &x).unwrap()[0].data().iter().all(|&v| v == 0.0));
        let m = softmax_masks(&[vec![0.2, 0.1], vec![0.0, 0.4]], 1, 2, 0.1).unwrap();
        let r = apply_masks(&m, &x).unwrap();
        for idx in 0..4 {
            assert!((r[0].data()[idx] + r[1].data()[idx] - x.data()[idx]).abs() <= 1e-12);
        }
        let wrong = FeatureMap::new(1, 2, 1, vec![0.0, 0.0]).unwrap();
        assert!(apply_masks(&m, &wrong).is_err());
    }

    #[test]
    fn background_composition_cases() {
        let fg = PartitionMasks::new(2, 1, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let obj = PartitionMasks::new(2, 1, 2, vec![0.3, 0.6, 0.7, 0.4]).unwrap();
        let out = background_composition(&fg, &obj).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.3, 0.6, 0.7, 0.4]);

        let half = PartitionMasks::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        let third = PartitionMasks::new(3, 1, 1, vec![1.0 / 3.0; 3]).unwrap();
        let out = background_composition(&half, &third).unwrap();
        assert_eq!(out.get(0, 0, 0), 0.5);
        for i in 1..4 {
            assert!((out.get(i, 0, 0) - 0.5 / 3.0).abs() <= 1e-15);
        }
        assert!(background_composition(&third, &half).is_err());
    }

    #[test]
    fn pooling_and_costs() {
        let x = FeatureMap::new(2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let slots = pool_slots(&[x]);
        assert_eq!(slots.slots, vec![vec![2.5, 5.0]]);
        let zero = FeatureMap::new(3, 2, 2, vec![0.0; 12]).unwrap();
        assert_eq!(pool_slots(&[zero]).slots, vec![vec![0.0; 3]]);

        let e = SlotSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(slot_costs(&e, &e).unwrap(), vec![vec![-1.0, -0.0], vec![-0.0, -1.0]]);
        let one = SlotSet::new(vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(slot_costs(&one, &one).unwrap(), vec![vec![-25.0]]);
        assert!(slot_costs(&one, &e).is_err());
        assert!(SlotSet::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn position_encoding_adds_coordinates() {
        let x = FeatureMap::new(1, 2, 2, vec![9.0; 4]).unwrap();
        let y = x.with_position_encoding();
        assert_eq!(y.channels(), 3);
        assert_eq!(y.channel(1), &[0.0, 0.0, 0.5, 0.5]);
        assert_eq!(y.channel(2), &[0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn matching_program_counts() {
        let qp = assemble_matching_qp(&[vec![0.0]], 0.1).unwrap();
        assert_eq!((qp.num_constraints(), qp.num_variables()), (2, 5));
        let qp = assemble_matching_qp(&[vec![0.0; 2], vec![0.0; 2]], 0.1).unwrap();
        assert_eq!((qp.num_constraints(), qp.num_variables()), (8, 12));
        assert_eq!(qp.independent_rows().len(), 7);
        assert!(assemble_matching_qp(&[vec![0.0; 2], vec![0.0; 2]], 0.0).is_err());
        assert!(assemble_matching_qp(&[vec![f64::NAN]], 0.1).is_err());
    }

    #[test]
    fn matching_solution_satisfies_every_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..=5 {
            let cost: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let qp = assemble_matching_qp(&cost, 0.1).unwrap();
            let sol = qp.solve().unwrap();
            assert!(sol.primal_residual(&qp.a, &qp.b) <= 1e-10);
            assert!(sol.dual_residual(&qp.a, 2.0 * qp.gamma, &qp.c) <= 1e-10);
        }
    }

    #[test]
    fn matching_with_zero_cost_is_permutation_symmetric() {
        let qp = assemble_matching_qp(&vec![vec![0.0; 3]; 3], 0.1).unwrap();
        let d = qp.edge_matrix(&qp.solve().unwrap().z);
        for row in &d {
            for v in row {
                assert!((v - d[0][0]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_slot_match() {
        let s = SlotSet::new(vec![vec![1.0, 2.0]]).unwrap();
        let t = SlotSet::new(vec![vec![3.0, -1.0]]).unwrap();
        let (m, r) = match_slots(&s, &t, 0.1, 0.1).unwrap();
        assert_eq!(m.m, vec![vec![1.0]]);
        assert_eq!(r, t);
    }

    #[test]
    fn permuting_target_slots_permutes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cost: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<Vec<f64>> = cost.iter().map(|row| perm.iter().map(|&j| row[j]).collect()).collect();
        let a = match_costs(&cost, 0.1, 0.1).unwrap();
        let b = match_costs(&permuted, 0.1, 0.1).unwrap();
        for i in 0..4 {
            for (jj, &j) in perm.iter().enumerate() {
                assert!((b.m[i][jj] - a.m[i][j]).abs() <= 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn masks_sum_to_one(seed in any::<u64>(), k in 1usize..4, h in 1usize..4, w in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fields: Vec<_> = (0..k).map(|_| random_field(&mut rng, h, w)).collect();
            let m = k_partition_masks(&fields, 0.5, 0.1).unwrap();
            prop_assert!(m.max_sum_error() <= 1e-6);
            prop_assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn match_rows_are_stochastic(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let m = match_costs(&cost, 0.1, 0.1).unwrap();
            for row in &m.m {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}
