//! Random problem instances for tests, benchmarks and demos.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Mat, C64, DEFAULT_RANK_TOL};
use crate::model::{check_joint, MultiChannelSystem, NeighborGraph};
use crate::synth::SpectrumSpec;

const MAX_REJECTIONS: usize = 1000;

pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// Jointly controllable and observable plant with one input and one output
/// per channel, entries uniform in `[-1, 1]`.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Result<MultiChannelSystem> {
    for _ in 0..MAX_REJECTIONS {
        let a = uniform_matrix(rng, n, n);
        let b = (0..m).map(|_| uniform_matrix(rng, n, 1)).collect();
        let c = (0..m).map(|_| uniform_matrix(rng, 1, n)).collect();
        let sys = MultiChannelSystem::new(a, b, c)?;
        if check_joint(&sys, DEFAULT_RANK_TOL)?.passed() {
            return Ok(sys);
        }
    }
    Err(Error::Numerical(format!("no jointly controllable and observable draw for n = {n}, m = {m}")))
}

/// Strongly connected graph with self-loops; each other arc is present with
/// probability `density`.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, m: usize, density: f64) -> Result<NeighborGraph> {
    for _ in 0..MAX_REJECTIONS {
        let sets = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j == i || rng.random_bool(density))
                    .collect::<BTreeSet<_>>()
            })
            .collect();
        let g = NeighborGraph::new(sets)?;
        if g.is_strongly_connected() {
            return Ok(g);
        }
    }
    Err(Error::Numerical(format!("no strongly connected draw for m = {m}")))
}

pub fn random_feedback<R: Rng + ?Sized>(rng: &mut R, sys: &MultiChannelSystem) -> Vec<Mat> {
    (0..sys.m())
        .map(|i| uniform_matrix(rng, sys.input_dim(i), sys.n()))
        .collect()
}

/// Symmetric set of `count` values with real parts in `[-3, -1]`, about a
/// quarter of them in conjugate pairs.
pub fn random_stable_spectrum<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Result<SpectrumSpec> {
    let mut values = Vec::with_capacity(count);
    let pairs = count / 4;
    for _ in 0..pairs {
        let z = C64::new(rng.random_range(-3.0..=-1.0), rng.random_range(0.5..=1.5));
        values.push(z);
        values.push(z.conj());
    }
    while values.len() < count {
        values.push(C64::new(rng.random_range(-3.0..=-1.0), 0.0));
    }
    SpectrumSpec::new(values)
}
