//! Plant and graph data types, plus the rank tests every later stage uses.

mod graph;

pub use graph::{spanning_tree, NeighborGraph, SpanningTree};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{controllability_staircase, ensure_finite, hstack, vstack, Mat};

pub use crate::linalg::numerical_rank;

/// An `n`-dimensional `m`-channel LTI plant: `x' = Ax + sum B_i u_i`, `y_i = C_i x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSystem {
    a: Mat,
    b: Vec<Mat>,
    c: Vec<Mat>,
}

impl MultiChannelSystem {
    /// Checks shapes and finiteness. Zero `B_i` / `C_i` are accepted here and
    /// reported by [`check_joint`].
    pub fn new(a: Mat, b: Vec<Mat>, c: Vec<Mat>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::dims("A", "nonempty square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        let m = b.len();
        if m < 2 {
            return Err(Error::invalid(format!("a multi-channel system needs m >= 2 channels, got {m}")));
        }
        if c.len() != m {
            return Err(Error::dims("channel count of C", m, c.len()));
        }
        ensure_finite(&a, "A")?;
        for (i, bi) in b.iter().enumerate() {
            if bi.nrows() != n || bi.ncols() == 0 {
                return Err(Error::dims(format!("B_{}", i + 1), format!("{n}xk, k >= 1"), format!("{}x{}", bi.nrows(), bi.ncols())));
            }
            ensure_finite(bi, &format!("B_{}", i + 1))?;
        }
        for (i, ci) in c.iter().enumerate() {
            if ci.ncols() != n || ci.nrows() == 0 {
                return Err(Error::dims(format!("C_{}", i + 1), format!("kx{n}, k >= 1"), format!("{}x{}", ci.nrows(), ci.ncols())));
            }
            ensure_finite(ci, &format!("C_{}", i + 1))?;
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self, i: usize) -> &Mat {
        &self.b[i]
    }

    pub fn c(&self, i: usize) -> &Mat {
        &self.c[i]
    }

    pub fn inputs(&self) -> &[Mat] {
        &self.b
    }

    pub fn outputs(&self) -> &[Mat] {
        &self.c
    }

    /// Input width `m_i`.
    pub fn input_dim(&self, i: usize) -> usize {
        self.b[i].ncols()
    }

    /// Output width `p_i`.
    pub fn output_dim(&self, i: usize) -> usize {
        self.c[i].nrows()
    }

    /// `[B_1 ... B_m]`.
    pub fn stacked_b(&self) -> Mat {
        hstack(&self.b.iter().collect::<Vec<_>>())
    }

    /// `column{C_1, ..., C_m}`.
    pub fn stacked_c(&self) -> Mat {
        vstack(&self.c.iter().collect::<Vec<_>>())
    }

    /// `A + sum_i B_i F_i`.
    pub fn closed_loop_a(&self, feedback: &[Mat]) -> Result<Mat> {
        check_feedback(self, feedback)?;
        let mut out = self.a.clone();
        for (bi, fi) in self.b.iter().zip(feedback) {
            out += bi * fi;
        }
        Ok(out)
    }

    /// All-zero feedback matrices of the right shapes.
    pub fn zero_feedback(&self) -> Vec<Mat> {
        (0..self.m()).map(|i| Mat::zeros(self.input_dim(i), self.n())).collect()
    }
}

pub(crate) fn check_feedback(sys: &MultiChannelSystem, feedback: &[Mat]) -> Result<()> {
    if feedback.len() != sys.m() {
        return Err(Error::dims("feedback list", sys.m(), feedback.len()));
    }
    for (i, f) in feedback.iter().enumerate() {
        if f.shape() != (sys.input_dim(i), sys.n()) {
            return Err(Error::dims(
                format!("F_{}", i + 1),
                format!("{}x{}", sys.input_dim(i), sys.n()),
                format!("{}x{}", f.nrows(), f.ncols()),
            ));
        }
        ensure_finite(f, &format!("F_{}", i + 1))?;
    }
    Ok(())
}

fn check_pair(a: &Mat, b: &Mat) -> Result<()> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::dims("A", "nonempty square", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != a.nrows() || b.ncols() == 0 {
        return Err(Error::dims("B", format!("{}xk", a.nrows()), format!("{}x{}", b.nrows(), b.ncols())));
    }
    Ok(())
}

/// Controllability index of `(A, B)`: smallest `k` with
/// `rank [B, AB, ..., A^{k-1}B] = n`, or `None` if the pair is not controllable.
pub fn controllability_index(a: &Mat, b: &Mat, tol: f64) -> Result<Option<usize>> {
    check_pair(a, b)?;
    let steps = controllability_staircase(a, b, tol)?;
    Ok((steps.iter().sum::<usize>() == a.nrows()).then_some(steps.len()))
}

pub fn is_controllable(a: &Mat, b: &Mat, tol: f64) -> Result<bool> {
    check_pair(a, b)?;
    Ok(controllability_index(a, b, tol)?.is_some())
}

pub fn is_observable(c: &Mat, a: &Mat, tol: f64) -> Result<bool> {
    if c.ncols() != a.ncols() {
        return Err(Error::dims("C", format!("kx{}", a.ncols()), format!("{}x{}", c.nrows(), c.ncols())));
    }
    is_controllable(&a.transpose(), &c.transpose(), tol)
}

/// Outcome of the structural assumptions on a multi-channel plant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructureReport {
    pub jointly_controllable: bool,
    pub jointly_observable: bool,
    /// 1-based channels with `B_i = 0`.
    pub zero_inputs: Vec<usize>,
    /// 1-based channels with `C_i = 0`.
    pub zero_outputs: Vec<usize>,
    pub violations: Vec<String>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_joint(sys: &MultiChannelSystem, tol: f64) -> Result<StructureReport> {
    let jointly_controllable = is_controllable(sys.a(), &sys.stacked_b(), tol)?;
    let jointly_observable = is_observable(&sys.stacked_c(), sys.a(), tol)?;
    let zero_inputs: Vec<usize> = (0..sys.m())
        .filter(|&i| sys.b(i).iter().all(|&v| v == 0.0))
        .map(|i| i + 1)
        .collect();
    let zero_outputs: Vec<usize> = (0..sys.m())
        .filter(|&i| sys.c(i).iter().all(|&v| v == 0.0))
        .map(|i| i + 1)
        .collect();
    let mut violations = Vec::new();
    if !jointly_controllable {
        violations.push("(A, [B_1 ... B_m]) is not controllable".to_string());
    }
    if !jointly_observable {
        violations.push("(column{C_1 ... C_m}, A) is not observable".to_string());
    }
    violations.extend(zero_inputs.iter().map(|i| format!("B_{i} = 0")));
    violations.extend(zero_outputs.iter().map(|i| format!("C_{i} = 0")));
    Ok(StructureReport {
        jointly_controllable,
        jointly_observable,
        zero_inputs,
        zero_outputs,
        violations,
    })
}
