//! Fill-reducing orderings for symmetric sparse matrices.
//!
//! [`minimum_degree`] is an approximate minimum degree ordering on the
//! quotient graph: eliminated vertices become elements, elements adjacent to
//! the pivot are absorbed into it, and vertex degrees are bounded with the
//! usual `|A_i| + |L_p \ i| + Σ|L_e \ L_p|` estimate. Supervariable detection
//! and mass elimination are not implemented.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::SparseMatrix;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Variable,
    Element,
    Absorbed,
}

/// Returns `perm` with `perm[k]` = the original index eliminated at step `k`.
///
/// Only the pattern of `s` is inspected; it is symmetrized internally and the
/// diagonal is ignored.
pub fn minimum_degree(s: &SparseMatrix) -> Vec<usize> {
    let n = s.rows();
    let mut adj_vars: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in s.row(i) {
            if i != j && j < n {
                adj_vars[i].push(j);
                adj_vars[j].push(i);
            }
        }
    }
    for list in adj_vars.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let mut adj_elems: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut state = vec![Node::Variable; n];
    let mut degree: Vec<usize> = adj_vars.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((degree[i], i))).collect();

    let mut mark = vec![0usize; n];
    let mut stamp = 0usize;
    let mut ext = vec![0usize; n];
    let mut ext_mark = vec![0usize; n];

    let mut perm = Vec::with_capacity(n);
    let mut lp: Vec<usize> = Vec::new();

    while let Some(Reverse((d, p))) = heap.pop() {
        if state[p] != Node::Variable || degree[p] != d {
            continue;
        }
        perm.push(p);
        let remaining = n - perm.len();

        stamp += 1;
        mark[p] = stamp;
        lp.clear();
        for &v in &adj_vars[p] {
            if state[v] == Node::Variable && mark[v] != stamp {
                mark[v] = stamp;
                lp.push(v);
            }
        }
        let absorbed = std::mem::take(&mut adj_elems[p]);
        for &e in &absorbed {
            if state[e] != Node::Element {
                continue;
            }
            for &v in &members[e] {
                if v != p && state[v] == Node::Variable && mark[v] != stamp {
                    mark[v] = stamp;
                    lp.push(v);
                }
            }
            state[e] = Node::Absorbed;
            members[e] = Vec::new();
        }
        state[p] = Node::Element;
        adj_vars[p] = Vec::new();

        // |L_e \ L_p| for every live element touching the new element
        for &i in &lp {
            for &e in &adj_elems[i] {
                if state[e] != Node::Element {
                    continue;
                }
                if ext_mark[e] != stamp {
                    ext_mark[e] = stamp;
                    ext[e] = members[e].len();
                }
                ext[e] -= 1;
            }
        }

        for &i in &lp {
            let elems = &mut adj_elems[i];
            elems.retain(|&e| state[e] == Node::Element);
            for &e in elems.iter() {
                if ext[e] == 0 {
                    // L_e ⊆ L_p: aggressive absorption
                    state[e] = Node::Absorbed;
                }
            }
            elems.retain(|&e| state[e] == Node::Element);
            let external: usize = elems.iter().map(|&e| ext[e]).sum();
            elems.push(p);

            adj_vars[i].retain(|&v| state[v] == Node::Variable && mark[v] != stamp);

            let approx = adj_vars[i].len() + (lp.len() - 1) + external;
            let bound = degree[i] + lp.len() - 1;
            let new_degree = approx.min(bound).min(remaining.saturating_sub(1));
            degree[i] = new_degree;
            heap.push(Reverse((new_degree, i)));
        }
        members[p] = lp.clone();
    }
    perm
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}
