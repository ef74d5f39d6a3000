//! The s-t grid graph over an `H×W` image and the cut problems built on it.
//!
//! Pixel `(r, c)` is vertex `r·W + c`; the source is `H·W` and the terminal
//! `H·W + 1`. Every pixel owns up to six directed edges, one per weight
//! channel: its four outgoing neighbor edges, the incoming source edge and
//! the outgoing terminal edge.
//!
//! The regularized cut program has variables laid out as
//! `[p (all vertices) | d (one per edge) | s (one per constraint)]` and one
//! constraint per edge, `d_uv − s_uv − p_u + p_v = 0`, followed by
//! `p_s − p_t − s_st = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::sparse::SparseMatrix;

pub const CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    East,
    West,
    North,
    South,
    FromSource,
    ToTerminal,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; CHANNELS] = [
        EdgeKind::East,
        EdgeKind::West,
        EdgeKind::North,
        EdgeKind::South,
        EdgeKind::FromSource,
        EdgeKind::ToTerminal,
    ];

    /// Weight channel holding this edge's weight.
    pub fn channel(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub kind: EdgeKind,
    /// Pixel whose weight channel carries this edge.
    pub pixel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGraph {
    height: usize,
    width: usize,
    edges: Vec<Edge>,
}

impl GridGraph {
    /// Builds the graph with edges ordered pixel by pixel (row-major) and,
    /// within a pixel, east, west, north, south, from-source, to-terminal.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must be non-empty, got {height}x{width}"
            )));
        }
        let pixels = height * width;
        let (source, terminal) = (pixels, pixels + 1);
        let mut edges = Vec::with_capacity(expected_edge_count(height, width));
        for r in 0..height {
            for c in 0..width {
                let v = r * width + c;
                let mut push = |tail, head, kind| edges.push(Edge { tail, head, kind, pixel: v });
                if c + 1 < width {
                    push(v, v + 1, EdgeKind::East);
                }
                if c > 0 {
                    push(v, v - 1, EdgeKind::West);
                }
                if r > 0 {
                    push(v, v - width, EdgeKind::North);
                }
                if r + 1 < height {
                    push(v, v + width, EdgeKind::South);
                }
                push(source, v, EdgeKind::FromSource);
                push(v, terminal, EdgeKind::ToTerminal);
            }
        }
        Ok(Self { height, width, edges })
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

    pub fn num_vertices(&self) -> usize {
        self.num_pixels() + 2
    }

    pub fn source(&self) -> usize {
        self.num_pixels()
    }

    pub fn terminal(&self) -> usize {
        self.num_pixels() + 1
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn pixel(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Number of variables of the cut program: potentials, edge variables, slacks.
    pub fn num_variables(&self) -> usize {
        self.num_vertices() + self.edges.len() + self.num_constraints()
    }

    pub fn num_constraints(&self) -> usize {
        self.edges.len() + 1
    }
}

/// `2·(H·(W−1) + W·(H−1)) + 2·H·W`.
pub fn expected_edge_count(height: usize, width: usize) -> usize {
    2 * (height * (width - 1) + width * (height - 1)) + 2 * height * width
}

/// Per-pixel edge weights, channel-major: `data[ch·H·W + r·W + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutWeightField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl CutWeightField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::DimensionMismatch(format!(
                "weight field of length {} for {height}x{width}",
                data.len()
            )));
        }
        ensure_finite(&data, "cut weights")?;
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; CHANNELS * height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(EdgeKind, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for kind in EdgeKind::ALL {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(kind, r, c));
                }
            }
        }
        Self { height, width, data }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, kind: EdgeKind, row: usize, col: usize) -> usize {
        kind.channel() * self.height * self.width + row * self.width + col
    }

    pub fn get(&self, kind: EdgeKind, row: usize, col: usize) -> f64 {
        self.data[self.offset(kind, row, col)]
    }

    pub fn set(&mut self, kind: EdgeKind, row: usize, col: usize, value: f64) {
        let k = self.offset(kind, row, col);
        self.data[k] = value;
    }

    /// Weight of an edge of `g`.
    pub fn edge_weight(&self, g: &GridGraph, edge: &Edge) -> f64 {
        self.get(edge.kind, edge.pixel / g.width(), edge.pixel % g.width())
    }

    fn map_pixels(&self, swap: impl Fn(EdgeKind) -> EdgeKind, flip: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        Self::from_fn(self.height, self.width, |kind, r, c| {
            let (sr, sc) = flip(r, c);
            self.get(swap(kind), sr, sc)
        })
    }

    /// Left-right mirror image; east and west channels trade places.
    pub fn mirrored_horizontal(&self) -> Self {
        let w = self.width;
        self.map_pixels(
            |k| match k {
                EdgeKind::East => EdgeKind::West,
                EdgeKind::West => EdgeKind::East,
                other => other,
            },
            |r, c| (r, w - 1 - c),
        )
    }

    /// Top-bottom mirror image; north and south channels trade places.
    pub fn mirrored_vertical(&self) -> Self {
        let h = self.height;
        self.map_pixels(
            |k| match k {
                EdgeKind::North => EdgeKind::South,
                EdgeKind::South => EdgeKind::North,
                other => other,
            },
            |r, c| (h - 1 - r, c),
        )
    }

    /// Source and terminal channels exchanged.
    pub fn swapped_terminals(&self) -> Self {
        self.map_pixels(
            |k| match k {
                EdgeKind::FromSource => EdgeKind::ToTerminal,
                EdgeKind::ToTerminal => EdgeKind::FromSource,
                other => other,
            },
            |r, c| (r, c),
        )
    }

    fn check_shape(&self, g: &GridGraph) -> Result<()> {
        if self.height != g.height() || self.width != g.width() {
            return Err(Error::DimensionMismatch(format!(
                "weights are {}x{}, graph is {}x{}",
                self.height,
                self.width,
                g.height(),
                g.width()
            )));
        }
        Ok(())
    }
}

/// Role of a variable in a cut program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarTag {
    Potential(usize),
    EdgeVar(usize),
    Slack(usize),
}

/// Regularized equality-constrained cut program `min ½γ‖z‖² + cᵀz, A·z = b`.
#[derive(Debug, Clone)]
pub struct CutQP {
    pub height: usize,
    pub width: usize,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub gamma: f64,
    pub index_map: Vec<VarTag>,
}

impl CutQP {
    pub fn num_variables(&self) -> usize {
        self.a.cols()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.rows()
    }
}

/// Constraint matrix and right-hand side shared by every cut on `g`.
pub fn cut_constraints(g: &GridGraph) -> (SparseMatrix, Vec<f64>) {
    let nv = g.num_vertices();
    let m = g.edges().len();
    let l = m + 1;
    let mut triplets = Vec::with_capacity(4 * m + 3);
    for (e, edge) in g.edges().iter().enumerate() {
        triplets.push((e, edge.tail, -1.0));
        triplets.push((e, edge.head, 1.0));
        triplets.push((e, nv + e, 1.0));
        triplets.push((e, nv + m + e, -1.0));
    }
    triplets.push((m, g.source(), 1.0));
    triplets.push((m, g.terminal(), -1.0));
    triplets.push((m, nv + m + m, -1.0));
    let a = SparseMatrix::from_triplets(l, nv + m + l, &triplets).expect("indices in range");
    let mut b = vec![0.0; l];
    b[m] = 1.0;
    (a, b)
}

/// Objective vector: the edge weight on every edge variable, zero elsewhere.
pub fn cut_objective(g: &GridGraph, w: &CutWeightField) -> Result<Vec<f64>> {
    w.check_shape(g)?;
    ensure_finite(w.data(), "cut weights")?;
    let nv = g.num_vertices();
    let mut c = vec![0.0; g.num_variables()];
    for (e, edge) in g.edges().iter().enumerate() {
        c[nv + e] = w.edge_weight(g, edge);
    }
    Ok(c)
}

/// Maps a gradient on the objective vector back onto the weight channels.
/// Channels without an edge receive zero.
pub fn objective_grad_to_field(g: &GridGraph, grad_c: &[f64]) -> Result<CutWeightField> {
    if grad_c.len() != g.num_variables() {
        return Err(Error::DimensionMismatch(format!(
            "gradient of length {} for {} variables",
            grad_c.len(),
            g.num_variables()
        )));
    }
    let nv = g.num_vertices();
    let mut field = CutWeightField::constant(g.height(), g.width(), 0.0);
    for (e, edge) in g.edges().iter().enumerate() {
        let (r, c) = (edge.pixel / g.width(), edge.pixel % g.width());
        field.set(edge.kind, r, c, grad_c[nv + e]);
    }
    Ok(field)
}

pub fn cut_index_map(g: &GridGraph) -> Vec<VarTag> {
    let nv = g.num_vertices();
    let m = g.edges().len();
    (0..nv)
        .map(VarTag::Potential)
        .chain((0..m).map(VarTag::EdgeVar))
        .chain((0..=m).map(VarTag::Slack))
        .collect()
}

pub fn assemble_cut_qp(g: &GridGraph, w: &CutWeightField, gamma: f64) -> Result<CutQP> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let c = cut_objective(g, w)?;
    let (a, b) = cut_constraints(g);
    Ok(CutQP {
        height: g.height(),
        width: g.width(),
        a,
        b,
        c,
        gamma,
        index_map: cut_index_map(g),
    })
}

/// Pixel potentials of a solution, row-major `H×W`; `p_s` and `p_t` are dropped.
pub fn extract_vertex_vars(qp: &CutQP, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != qp.index_map.len() {
        return Err(Error::DimensionMismatch(format!(
            "solution of length {} for {} variables",
            z.len(),
            qp.index_map.len()
        )));
    }
    let pixels = qp.height * qp.width;
    let mut out = vec![0.0; pixels];
    for (tag, &value) in qp.index_map.iter().zip(z) {
        if let VarTag::Potential(v) = *tag {
            if v < pixels {
                out[v] = value;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_graph() {
        let g = GridGraph::new(1, 1).unwrap();
        assert_eq!(g.num_vertices(), 3);
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0], Edge { tail: 1, head: 0, kind: EdgeKind::FromSource, pixel: 0 });
        assert_eq!(g.edges()[1], Edge { tail: 0, head: 2, kind: EdgeKind::ToTerminal, pixel: 0 });
    }

    #[test]
    fn edge_counts_follow_formula() {
        assert_eq!(GridGraph::new(2, 2).unwrap().edges().len(), 16);
        let g = GridGraph::new(64, 64).unwrap();
        assert_eq!(g.num_vertices(), 4098);
        assert_eq!(g.edges().len(), 24_320);
        for h in 1..=12 {
            for w in 1..=12 {
                let g = GridGraph::new(h, w).unwrap();
                assert_eq!(g.edges().len(), expected_edge_count(h, w));
                assert_eq!(g.num_constraints(), g.edges().len() + 1);
                assert_eq!(g.num_variables(), g.num_vertices() + 2 * g.edges().len() + 1);
            }
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(GridGraph::new(0, 3).is_err());
        assert!(GridGraph::new(3, 0).is_err());
    }

    #[test]
    fn every_pixel_has_one_source_and_one_terminal_edge() {
        let g = GridGraph::new(3, 4).unwrap();
        for v in 0..g.num_pixels() {
            let from_s = g.edges().iter().filter(|e| e.tail == g.source() && e.head == v).count();
            let to_t = g.edges().iter().filter(|e| e.tail == v && e.head == g.terminal()).count();
            assert_eq!((from_s, to_t), (1, 1));
        }
        for e in g.edges().iter().filter(|e| e.head < g.num_pixels() && e.tail < g.num_pixels()) {
            let (a, b) = ((e.tail / 4, e.tail % 4), (e.head / 4, e.head % 4));
            assert_eq!(a.0.abs_diff(b.0) + a.1.abs_diff(b.1), 1);
        }
    }

    #[test]
    fn single_pixel_qp_counts() {
        let g = GridGraph::new(1, 1).unwrap();
        let qp = assemble_cut_qp(&g, &CutWeightField::constant(1, 1, 1.0), 0.5).unwrap();
        assert_eq!(qp.num_variables(), 8);
        assert_eq!(qp.num_constraints(), 3);
        assert_eq!(qp.b, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn large_qp_counts() {
        let g = GridGraph::new(64, 64).unwrap();
        let qp = assemble_cut_qp(&g, &CutWeightField::constant(64, 64, 1.0), 0.5).unwrap();
        assert_eq!(qp.num_variables(), 52_739);
        assert_eq!(qp.num_constraints(), 24_321);
        assert_eq!(qp.a.nnz(), 97_283);
    }

    #[test]
    fn every_row_has_one_private_slack() {
        let g = GridGraph::new(3, 2).unwrap();
        let qp = assemble_cut_qp(&g, &CutWeightField::constant(3, 2, 1.0), 1.0).unwrap();
        let counts = qp.a.column_counts();
        for r in 0..qp.num_constraints() {
            let slacks: Vec<_> = qp
                .a
                .row(r)
                .filter(|&(c, _)| matches!(qp.index_map[c], VarTag::Slack(_)))
                .collect();
            assert_eq!(slacks.len(), 1);
            assert_eq!(slacks[0].1, -1.0);
            assert_eq!(counts[slacks[0].0], 1);
        }
        for (i, tag) in qp.index_map.iter().enumerate() {
            if !matches!(tag, VarTag::EdgeVar(_)) {
                assert_eq!(qp.c[i], 0.0);
            }
        }
    }

    #[test]
    fn boundary_channels_are_ignored() {
        let g = GridGraph::new(1, 2).unwrap();
        let mut w = CutWeightField::constant(1, 2, 1.0);
        let base = cut_objective(&g, &w).unwrap();
        w.set(EdgeKind::West, 0, 0, 99.0);
        w.set(EdgeKind::North, 0, 1, -7.0);
        assert_eq!(cut_objective(&g, &w).unwrap(), base);
    }

    #[test]
    fn assembly_errors() {
        let g = GridGraph::new(2, 2).unwrap();
        assert!(assemble_cut_qp(&g, &CutWeightField::constant(2, 3, 1.0), 1.0).is_err());
        assert!(assemble_cut_qp(&g, &CutWeightField::constant(2, 2, 1.0), 0.0).is_err());
        let mut w = CutWeightField::constant(2, 2, 1.0);
        w.set(EdgeKind::East, 0, 0, f64::NAN);
        assert!(matches!(assemble_cut_qp(&g, &w, 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn extraction_uses_index_map() {
        let g = GridGraph::new(2, 2).unwrap();
        let qp = assemble_cut_qp(&g, &CutWeightField::constant(2, 2, 1.0), 1.0).unwrap();
        assert_eq!(extract_vertex_vars(&qp, &vec![0.0; qp.num_variables()]).unwrap(), vec![0.0; 4]);
        assert!(extract_vertex_vars(&qp, &[0.0; 3]).is_err());

        let z: Vec<f64> = (0..qp.num_variables()).map(|i| i as f64).collect();
        let direct = extract_vertex_vars(&qp, &z).unwrap();
        assert_eq!(direct, vec![0.0, 1.0, 2.0, 3.0]);

        // relabel variables by reversing their storage order
        let mut permuted = qp.clone();
        permuted.index_map.reverse();
        let mut z_rev = z.clone();
        z_rev.reverse();
        assert_eq!(extract_vertex_vars(&permuted, &z_rev).unwrap(), direct);
    }

    #[test]
    fn mirrors_are_involutions() {
        let w = CutWeightField::from_fn(3, 4, |k, r, c| (k.channel() * 100 + r * 10 + c) as f64);
        assert_eq!(w.mirrored_horizontal().mirrored_horizontal(), w);
        assert_eq!(w.mirrored_vertical().mirrored_vertical(), w);
        assert_eq!(w.swapped_terminals().swapped_terminals(), w);
        assert_eq!(w.mirrored_horizontal().get(EdgeKind::East, 1, 0), w.get(EdgeKind::West, 1, 3));
    }

    #[test]
    fn gradient_field_roundtrip() {
        let g = GridGraph::new(2, 3).unwrap();
        let w = CutWeightField::from_fn(2, 3, |k, r, c| (k.channel() + r + c) as f64);
        let c = cut_objective(&g, &w).unwrap();
        let back = objective_grad_to_field(&g, &c).unwrap();
        // every existing edge channel is recovered; boundary channels are zero
        assert_eq!(cut_objective(&g, &back).unwrap(), c);
        assert_eq!(back.get(EdgeKind::West, 0, 0), 0.0);
    }
}
