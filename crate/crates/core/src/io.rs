//! JSON file formats.
//!
//! Matrices are row-major nested arrays. Channel `i` is at array position
//! `i - 1`; neighbor lists and the controller channel `q` use 1-based labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errorsys::OutputPartition;
use crate::linalg::Mat;
use crate::model::{MultiChannelSystem, NeighborGraph};
use crate::synth::{CompensatorMode, ObserverGains};

pub type Rows = Vec<Vec<f64>>;

pub fn mat_to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Parses nested rows. `cols` fixes the width of an empty matrix and is
/// checked otherwise.
pub fn rows_to_mat(rows: &[Vec<f64>], cols: Option<usize>, what: &str) -> Result<Mat> {
    let width = match (rows.first(), cols) {
        (Some(r), _) => r.len(),
        (None, Some(c)) => c,
        (None, None) => 0,
    };
    if let Some(c) = cols {
        if c != width {
            return Err(Error::dims(what, format!("{c} columns"), format!("{width} columns")));
        }
    }
    for (k, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::invalid(format!(
                "{what}: row {} has {} entries, expected {width}",
                k + 1,
                r.len()
            )));
        }
    }
    Ok(Mat::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// Plant, graph and optional state feedback.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Vec<Rows>,
    #[serde(rename = "C")]
    pub c: Vec<Rows>,
    pub neighbors: Vec<Vec<usize>>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Rows>>,
}

impl SystemFile {
    pub fn from_parts(sys: &MultiChannelSystem, g: &NeighborGraph, feedback: Option<&[Mat]>) -> Self {
        Self {
            n: sys.n(),
            m: sys.m(),
            a: mat_to_rows(sys.a()),
            b: sys.inputs().iter().map(mat_to_rows).collect(),
            c: sys.outputs().iter().map(mat_to_rows).collect(),
            neighbors: g.to_labels(),
            f: feedback.map(|f| f.iter().map(mat_to_rows).collect()),
        }
    }

    pub fn into_parts(self) -> Result<(MultiChannelSystem, NeighborGraph, Option<Vec<Mat>>)> {
        let n = self.n;
        let m = self.m;
        let count = |what: &str, len: usize| -> Result<()> {
            if len != m {
                return Err(Error::dims(format!("number of {what} entries"), m, len));
            }
            Ok(())
        };
        count("B", self.b.len())?;
        count("C", self.c.len())?;
        count("neighbors", self.neighbors.len())?;
        let a = rows_to_mat(&self.a, Some(n), "A")?;
        if a.nrows() != n {
            return Err(Error::dims("A", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        let b = self
            .b
            .iter()
            .enumerate()
            .map(|(i, r)| rows_to_mat(r, None, &format!("B_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let c = self
            .c
            .iter()
            .enumerate()
            .map(|(i, r)| rows_to_mat(r, Some(n), &format!("C_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let sys = MultiChannelSystem::new(a, b, c)?;
        let g = NeighborGraph::from_labels(&self.neighbors)?;
        let f = match self.f {
            None => None,
            Some(fs) => {
                count("F", fs.len())?;
                let f = fs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| rows_to_mat(r, Some(n), &format!("F_{}", i + 1)))
                    .collect::<Result<Vec<_>>>()?;
                crate::model::check_feedback(&sys, &f)?;
                Some(f)
            }
        };
        Ok((sys, g, f))
    }
}

/// Final gains plus the feedback they were designed for.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GainsFile {
    /// 1-based controller channel.
    pub q: usize,
    pub mode: CompensatorMode,
    #[serde(default)]
    pub delay: usize,
    #[serde(rename = "K")]
    pub k: Vec<Rows>,
    /// `H[i - 1]` maps neighbor label `j` to `H_ij`.
    #[serde(rename = "H")]
    pub h: Vec<BTreeMap<usize, Rows>>,
    #[serde(rename = "Abar")]
    pub abar: Rows,
    #[serde(rename = "Bbar")]
    pub bbar: Rows,
    #[serde(rename = "Cbar")]
    pub cbar: Rows,
    #[serde(rename = "Dbar")]
    pub dbar: Rows,
    #[serde(rename = "F")]
    pub f: Vec<Rows>,
}

impl GainsFile {
    pub fn new(gains: &ObserverGains, feedback: &[Mat]) -> Self {
        Self {
            q: gains.q + 1,
            mode: gains.mode,
            delay: gains.delay,
            k: gains.k.iter().map(mat_to_rows).collect(),
            h: gains
                .h
                .iter()
                .map(|hi| hi.iter().map(|(j, m)| (j + 1, mat_to_rows(m))).collect())
                .collect(),
            abar: mat_to_rows(&gains.abar),
            bbar: mat_to_rows(&gains.bbar),
            cbar: mat_to_rows(&gains.cbar),
            dbar: mat_to_rows(&gains.dbar),
            f: feedback.iter().map(mat_to_rows).collect(),
        }
    }

    /// Rebuilds gains and feedback, checking shapes against the plant.
    pub fn into_gains(self, sys: &MultiChannelSystem) -> Result<(ObserverGains, Vec<Mat>)> {
        let n = sys.n();
        let m = sys.m();
        if self.q == 0 || self.q > m {
            return Err(Error::invalid(format!("gains file: q = {} outside 1..={m}", self.q)));
        }
        let q = self.q - 1;
        if self.k.len() != m || self.h.len() != m || self.f.len() != m {
            return Err(Error::dims("gains file channel count", m, format!("K {}, H {}, F {}", self.k.len(), self.h.len(), self.f.len())));
        }
        let k = self
            .k
            .iter()
            .enumerate()
            .map(|(i, r)| rows_to_mat(r, Some(sys.output_dim(i)), &format!("K_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let mut h = Vec::with_capacity(m);
        for (i, hi) in self.h.iter().enumerate() {
            let mut out = BTreeMap::new();
            for (&j, r) in hi {
                if j == 0 || j > m {
                    return Err(Error::invalid(format!("gains file: H_{} has neighbor label {j}", i + 1)));
                }
                out.insert(j - 1, rows_to_mat(r, Some(n), &format!("H_{}{}", i + 1, j))?);
            }
            h.push(out);
        }
        let f = self
            .f
            .iter()
            .enumerate()
            .map(|(i, r)| rows_to_mat(r, Some(n), &format!("F_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        crate::model::check_feedback(sys, &f)?;

        let partition = OutputPartition {
            measurement_dim: sys.output_dim(q),
            n,
            neighbors: h[q].keys().copied().collect(),
        };
        let width = partition.total();
        let abar = rows_to_mat(&self.abar, None, "Abar")?;
        let order = abar.nrows();
        if abar.ncols() != order && order > 0 {
            return Err(Error::dims("Abar", "square", format!("{}x{}", order, abar.ncols())));
        }
        let abar = if order == 0 { Mat::zeros(0, 0) } else { abar };
        let bbar = if order == 0 { Mat::zeros(0, width) } else { rows_to_mat(&self.bbar, Some(width), "Bbar")? };
        let cbar = rows_to_mat(&self.cbar, Some(order), "Cbar")?;
        let dbar = rows_to_mat(&self.dbar, Some(width), "Dbar")?;
        // The controller drives estimator q directly, so it has n outputs.
        if bbar.nrows() != order || cbar.nrows() != n || dbar.nrows() != n {
            return Err(Error::dims(
                "channel controller",
                format!("order {order}, {n} outputs"),
                format!("Bbar {} rows, Cbar {} rows, Dbar {} rows", bbar.nrows(), cbar.nrows(), dbar.nrows()),
            ));
        }
        for (i, mat) in k.iter().enumerate() {
            if mat.nrows() != n {
                return Err(Error::dims(format!("K_{}", i + 1), format!("{n} rows"), mat.nrows()));
            }
        }
        let gains = ObserverGains {
            q,
            mode: self.mode,
            delay: self.delay,
            k,
            h,
            abar,
            bbar,
            cbar,
            dbar,
            partition,
        };
        Ok((gains, f))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Parses JSON, reporting line and column on failure.
pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::invalid(format!("{what}: {e}"))
    })
}
