//! Deterministic neighbor gains built from a spanning tree of the graph.
//!
//! For a root `q`, the tree matrix `G` has zero row sums, respects the graph's
//! sparsity and makes `(G, b_q)` controllable. Lifting it by `⊗ I_n` gives
//! neighbor gains for which the stacked error system is controllable from
//! channel `q` with controllability index `m`. A scalar sweep then keeps that
//! property when the lifted term is added to an arbitrary matrix.

use std::collections::BTreeMap;

use crate::error::{Error, Result, Stage};
use crate::errorsys::{build_btilde, build_ctilde, incidence_rows};
use crate::linalg::Mat;
use crate::model::{controllability_index, spanning_tree, NeighborGraph};

/// Scalar gains tried, in order, by [`gain_sweep`].
pub const GAIN_LADDER: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 0.5, 0.25];

/// `g_ii = v_i`, `g_{i, parent(i)} = -v_i`, zero elsewhere, with `v_q = 0` and
/// `v_i = i` (1-based label) otherwise.
pub fn tree_gain_matrix(g: &NeighborGraph, q: usize) -> Result<Mat> {
    let tree = spanning_tree(g, q)?;
    let m = g.m();
    let mut out = Mat::zeros(m, m);
    for i in 0..m {
        if let Some(p) = tree.parent[i] {
            let v = (i + 1) as f64;
            out[(i, i)] = v;
            out[(i, p)] = -v;
        }
    }
    Ok(out)
}

/// `sum_i Bt_i H_i Ct_i` for per-channel neighbor blocks.
pub fn neighbor_term(g: &NeighborGraph, h: &[BTreeMap<usize, Mat>], n: usize) -> Result<Mat> {
    let m = g.m();
    let mut out = Mat::zeros(n * m, n * m);
    for (i, hi) in h.iter().enumerate() {
        if hi.is_empty() {
            continue;
        }
        let blocks: Vec<&Mat> = hi.values().collect();
        let stacked = crate::linalg::hstack(&blocks);
        out += build_btilde(i, m, n)? * stacked * build_ctilde(g, i, n)?;
    }
    Ok(out)
}

/// Lifts a tree matrix to neighbor gains `H^_ij = h_ij I_n`, where row `i` of
/// `G` is written as `h_i c~_i` over the incidence rows of channel `i`.
pub fn lift_tree_gains(g: &NeighborGraph, gmat: &Mat, n: usize) -> Result<Vec<BTreeMap<usize, Mat>>> {
    let m = g.m();
    if gmat.shape() != (m, m) {
        return Err(Error::dims("tree gain matrix", format!("{m}x{m}"), format!("{}x{}", gmat.nrows(), gmat.ncols())));
    }
    let mut coeffs: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut hi = BTreeMap::new();
        for j in g.others(i) {
            hi.insert(j, -gmat[(i, j)]);
        }
        for j in 0..m {
            if j != i && gmat[(i, j)] != 0.0 && !g.has_arc(j, i) {
                return Err(Error::Internal(format!(
                    "row {} of G uses non-neighbor {}",
                    i + 1,
                    j + 1
                )));
            }
        }
        coeffs.push(hi);
    }

    // sum_i b_i h_i c~_i must reproduce G exactly.
    let mut rebuilt = Mat::zeros(m, m);
    for (i, hi) in coeffs.iter().enumerate() {
        let rows = incidence_rows(g, i)?;
        for (k, (_, &h)) in hi.iter().enumerate() {
            for c in 0..m {
                rebuilt[(i, c)] += h * rows[(k, c)];
            }
        }
    }
    if rebuilt != *gmat {
        return Err(Error::Internal(
            "tree gain matrix is not representable over the incidence rows".into(),
        ));
    }

    let eye = Mat::identity(n, n);
    Ok(coeffs
        .into_iter()
        .map(|hi| hi.into_iter().map(|(j, h)| (j, &eye * h)).collect())
        .collect())
}

/// First gain `g` from [`GAIN_LADDER`] for which `(base + g * part, input)` is
/// controllable with index at most `target_index` (exactly `target_index`
/// when `r * target_index` equals the state dimension).
pub fn gain_sweep(base: &Mat, part: &Mat, input: &Mat, target_index: usize, tol: f64) -> Result<f64> {
    let dim = base.nrows();
    if !base.is_square() || part.shape() != base.shape() || input.nrows() != dim {
        return Err(Error::dims(
            "gain sweep",
            format!("{dim}x{dim} pair with {dim}-row input"),
            format!("{}x{}, {}x{}", part.nrows(), part.ncols(), input.nrows(), input.ncols()),
        ));
    }
    match controllability_index(part, input, tol)? {
        Some(k) if k == target_index => {}
        other => {
            return Err(Error::invalid(format!(
                "gain sweep needs a pair with controllability index {target_index}, got {other:?}"
            )))
        }
    }
    let exact = input.ncols() * target_index == dim;
    for g in GAIN_LADDER {
        let candidate = base + part * g;
        match controllability_index(&candidate, input, tol)? {
            Some(k) if k == target_index || (!exact && k < target_index) => return Ok(g),
            _ => {}
        }
    }
    Err(Error::synthesis(
        Stage::TreeGain,
        "no gain on the ladder preserves the controllability index",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;
    use nalgebra::dmatrix;

    const TOL: f64 = 1e-10;

    fn pair_graph() -> NeighborGraph {
        NeighborGraph::from_labels(&[vec![1, 2], vec![1, 2]]).unwrap()
    }

    fn delay_graph() -> NeighborGraph {
        NeighborGraph::from_labels(&[vec![1, 2], vec![1, 2, 3], vec![2, 3]]).unwrap()
    }

    #[test]
    fn two_vertex_tree_matrix() {
        let gm = tree_gain_matrix(&pair_graph(), 0).unwrap();
        assert_eq!(gm, dmatrix![0.0, 0.0; -2.0, 2.0]);
        // [b_1, G b_1] has rank 2.
        let b = dmatrix![1.0; 0.0];
        assert_eq!(controllability_index(&gm, &b, TOL).unwrap(), Some(2));
    }

    #[test]
    fn delay_graph_tree_matrix_sparsity() {
        let g = delay_graph();
        let gm = tree_gain_matrix(&g, 1).unwrap();
        for i in 0..3 {
            assert_eq!(gm.row(i).sum(), 0.0);
            for j in 0..3 {
                if i != j && gm[(i, j)] != 0.0 {
                    assert!(g.has_arc(j, i));
                }
            }
        }
        // Tree arcs 2 -> 1 and 2 -> 3 only.
        assert_eq!(gm, dmatrix![1.0, -1.0, 0.0; 0.0, 0.0, 0.0; 0.0, -3.0, 3.0]);
    }

    #[test]
    fn lift_reproduces_kronecker() {
        let g = pair_graph();
        let gm = tree_gain_matrix(&g, 0).unwrap();
        let h = lift_tree_gains(&g, &gm, 2).unwrap();
        let term = neighbor_term(&g, &h, 2).unwrap();
        assert_eq!(term, kron(&gm, &Mat::identity(2, 2)));
    }

    #[test]
    fn lifted_pair_has_index_m_on_delay_graph() {
        let g = delay_graph();
        let n = 2;
        let gm = tree_gain_matrix(&g, 1).unwrap();
        let h = lift_tree_gains(&g, &gm, n).unwrap();
        let term = neighbor_term(&g, &h, n).unwrap();
        let bq = build_btilde(1, 3, n).unwrap();
        assert_eq!(controllability_index(&term, &bq, TOL).unwrap(), Some(3));
    }

    #[test]
    fn sweep_with_zero_base_takes_first_rung() {
        let g = pair_graph();
        let gm = tree_gain_matrix(&g, 0).unwrap();
        let b = dmatrix![1.0; 0.0];
        let got = gain_sweep(&Mat::zeros(2, 2), &gm, &b, 2, TOL).unwrap();
        assert_eq!(got, GAIN_LADDER[0]);
    }

    #[test]
    fn sweep_handles_overlapping_base() {
        let part = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        // base = -part makes g = 1 degenerate.
        let g = gain_sweep(&(-&part), &part, &b, 2, TOL).unwrap();
        assert!(g.is_finite() && g != 1.0);
        let idx = controllability_index(&(-&part + &part * g), &b, TOL).unwrap();
        assert_eq!(idx, Some(2));
    }

    #[test]
    fn sweep_rejects_bad_precondition() {
        let b = dmatrix![1.0; 0.0];
        assert!(gain_sweep(&Mat::zeros(2, 2), &Mat::identity(2, 2), &b, 2, TOL).is_err());
    }
}
