//! Kronecker assembly of the stacked estimation-error system.
//!
//! With `eps = column{e_1, ..., e_m}` the open-loop error dynamics are
//!
//! ```text
//! eps' = (At + sum_i Bt_i (K_i Ch_i + H_i Ct_i)) eps + Bt_q u_q
//! At   = I_m ⊗ (A + sum_j B_j F_j) - Q,    Q_ij = B_j F_j
//! Bt_i = b_i ⊗ I_n,   Ch_i = C_i Bt_i',   Ct_i = column{c_ij ⊗ I_n : j in N_i \ {i}}
//! ```
//!
//! and the channel-`q` output stacks `C_q e_q` above `e_q - e_j` for every
//! neighbor `j != q` in ascending order. Self-arcs are dropped everywhere: the
//! row `e_q - e_q` is identically zero.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{kron, vstack, Mat};
use crate::model::{check_feedback, MultiChannelSystem, NeighborGraph};

/// Per-channel output injection gains `K_i` (`n x p_i`) and neighbor gains
/// `H_ij` (`n x n`, one per `j in N_i \ {i}`).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGains {
    pub k: Vec<Mat>,
    pub h: Vec<BTreeMap<usize, Mat>>,
}

impl LocalGains {
    pub fn zeros(sys: &MultiChannelSystem, g: &NeighborGraph) -> Self {
        let n = sys.n();
        let k = (0..sys.m()).map(|i| Mat::zeros(n, sys.output_dim(i))).collect();
        let h = (0..sys.m())
            .map(|i| g.others(i).map(|j| (j, Mat::zeros(n, n))).collect())
            .collect();
        Self { k, h }
    }

    pub fn validate(&self, sys: &MultiChannelSystem, g: &NeighborGraph) -> Result<()> {
        let n = sys.n();
        if self.k.len() != sys.m() || self.h.len() != sys.m() {
            return Err(Error::dims("gain channel count", sys.m(), self.k.len().min(self.h.len())));
        }
        for i in 0..sys.m() {
            if self.k[i].shape() != (n, sys.output_dim(i)) {
                return Err(Error::dims(
                    format!("K_{}", i + 1),
                    format!("{n}x{}", sys.output_dim(i)),
                    format!("{}x{}", self.k[i].nrows(), self.k[i].ncols()),
                ));
            }
            let keys: Vec<usize> = self.h[i].keys().copied().collect();
            let expect: Vec<usize> = g.others(i).collect();
            if keys != expect {
                return Err(Error::invalid(format!(
                    "H_{} must have one block per neighbor {:?}, got {:?}",
                    i + 1,
                    expect.iter().map(|j| j + 1).collect::<Vec<_>>(),
                    keys.iter().map(|j| j + 1).collect::<Vec<_>>()
                )));
            }
            for (j, hij) in &self.h[i] {
                if hij.shape() != (n, n) {
                    return Err(Error::dims(
                        format!("H_{}{}", i + 1, j + 1),
                        format!("{n}x{n}"),
                        format!("{}x{}", hij.nrows(), hij.ncols()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `H_i = [H_{i j_1} ... H_{i j_k}]` over the ascending non-self neighbors.
    pub fn stacked_h(&self, i: usize, n: usize) -> Mat {
        let blocks: Vec<&Mat> = self.h[i].values().collect();
        if blocks.is_empty() {
            Mat::zeros(n, 0)
        } else {
            crate::linalg::hstack(&blocks)
        }
    }
}

/// Column layout of the channel-`q` output `y_q`: `p_q` rows of `C_q e_q`,
/// then `n` rows per neighbor difference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPartition {
    pub measurement_dim: usize,
    pub n: usize,
    /// Neighbors `j != q`, ascending.
    pub neighbors: Vec<usize>,
}

impl OutputPartition {
    pub fn total(&self) -> usize {
        self.measurement_dim + self.n * self.neighbors.len()
    }

    /// Column offset of the block for neighbor `j`.
    pub fn offset_of(&self, j: usize) -> Option<usize> {
        self.neighbors
            .iter()
            .position(|&x| x == j)
            .map(|k| self.measurement_dim + k * self.n)
    }
}

/// A plant with a single virtual input and output, ready for compensator design.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoop {
    pub state: Mat,
    pub input: Mat,
    pub output: Mat,
    pub partition: OutputPartition,
}

/// Assembled open-loop error system for channel `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem {
    pub q: usize,
    pub n: usize,
    pub m: usize,
    /// `At` before any gain injection.
    pub atilde: Mat,
    pub btilde: Vec<Mat>,
    pub chat: Vec<Mat>,
    pub ctilde: Vec<Mat>,
    pub open_loop: OpenLoop,
}

impl ErrorSystem {
    pub fn state_dim(&self) -> usize {
        self.n * self.m
    }
}

/// `b_i ⊗ I_n`: identity in block-row `i`, zeros elsewhere.
pub fn build_btilde(i: usize, m: usize, n: usize) -> Result<Mat> {
    if i >= m {
        return Err(Error::invalid(format!("channel {} outside 1..={m}", i + 1)));
    }
    let mut b = Mat::zeros(m, 1);
    b[(i, 0)] = 1.0;
    Ok(kron(&b, &Mat::identity(n, n)))
}

/// Row `c_ij = b_i' - b_j'` of the transposed incidence matrix for arc `j -> i`.
pub fn incidence_row(i: usize, j: usize, m: usize) -> Result<Mat> {
    if i >= m || j >= m {
        return Err(Error::invalid(format!("arc {} -> {} outside 1..={m}", j + 1, i + 1)));
    }
    if i == j {
        return Err(Error::invalid(format!("self-arc at vertex {} has no incidence row", i + 1)));
    }
    let mut row = Mat::zeros(1, m);
    row[(0, i)] = 1.0;
    row[(0, j)] = -1.0;
    Ok(row)
}

/// Stacked incidence rows `c~_i` for channel `i` (one row per non-self neighbor).
pub fn incidence_rows(g: &NeighborGraph, i: usize) -> Result<Mat> {
    let m = g.m();
    let rows: Vec<Mat> = g
        .others(i)
        .map(|j| incidence_row(i, j, m))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Mat::zeros(0, m));
    }
    Ok(vstack(&rows.iter().collect::<Vec<_>>()))
}

/// `Ct_i = c~_i ⊗ I_n`.
pub fn build_ctilde(g: &NeighborGraph, i: usize, n: usize) -> Result<Mat> {
    Ok(kron(&incidence_rows(g, i)?, &Mat::identity(n, n)))
}

/// `At = I_m ⊗ (A + sum_j B_j F_j) - Q` where block `(i, j)` of `Q` is `B_j F_j`.
pub fn build_atilde(sys: &MultiChannelSystem, feedback: &[Mat]) -> Result<Mat> {
    let n = sys.n();
    let m = sys.m();
    let acl = sys.closed_loop_a(feedback)?;
    let mut out = kron(&Mat::identity(m, m), &acl);
    for j in 0..m {
        let bf = sys.b(j) * &feedback[j];
        for i in 0..m {
            let mut blk = out.view_mut((i * n, j * n), (n, n));
            blk -= &bf;
        }
    }
    Ok(out)
}

/// The channel-`q` output map `y_q = Y eps`.
pub fn build_output_map(sys: &MultiChannelSystem, g: &NeighborGraph, q: usize) -> Result<(Mat, OutputPartition)> {
    let n = sys.n();
    let m = sys.m();
    let bq = build_btilde(q, m, n)?;
    let chat = sys.c(q) * bq.transpose();
    let ct = build_ctilde(g, q, n)?;
    let partition = OutputPartition {
        measurement_dim: sys.output_dim(q),
        n,
        neighbors: g.others(q).collect(),
    };
    Ok((vstack(&[&chat, &ct]), partition))
}

pub fn assemble_open_loop(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    gains: &LocalGains,
    q: usize,
) -> Result<ErrorSystem> {
    let n = sys.n();
    let m = sys.m();
    if g.m() != m {
        return Err(Error::dims("graph vertex count", m, g.m()));
    }
    if q >= m {
        return Err(Error::invalid(format!("channel q = {} outside 1..={m}", q + 1)));
    }
    check_feedback(sys, feedback)?;
    gains.validate(sys, g)?;

    let atilde = build_atilde(sys, feedback)?;
    let btilde: Vec<Mat> = (0..m).map(|i| build_btilde(i, m, n)).collect::<Result<_>>()?;
    let chat: Vec<Mat> = (0..m).map(|i| sys.c(i) * btilde[i].transpose()).collect();
    let ctilde: Vec<Mat> = (0..m).map(|i| build_ctilde(g, i, n)).collect::<Result<_>>()?;

    let mut state = atilde.clone();
    for i in 0..m {
        let mut inj = &gains.k[i] * &chat[i];
        if ctilde[i].nrows() > 0 {
            inj += gains.stacked_h(i, n) * &ctilde[i];
        }
        state += &btilde[i] * inj;
    }
    let (output, partition) = build_output_map(sys, g, q)?;
    let input = btilde[q].clone();
    Ok(ErrorSystem {
        q,
        n,
        m,
        atilde,
        btilde,
        chat,
        ctilde,
        open_loop: OpenLoop {
            state,
            input,
            output,
            partition,
        },
    })
}
