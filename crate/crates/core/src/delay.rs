//! Discrete-time observer design under network transmission delays.
//!
//! Every estimator exchanges `D`-step-old states, `D` being the largest delay
//! on any arc. Appending lagged errors `e_ik = e_i(t - k)` turns the delayed
//! error dynamics into a delay-free system of dimension `nm(D + 1)`:
//!
//! ```text
//! e_i(t+1)  = (A + K_i C_i) e_i + sum_j B_j F_j (e_i - e_j) + sum_j H_ij (e_iD - e_jD) + δ_iq u_q
//! e_i1(t+1) = e_i(t),   e_ik(t+1) = e_i,k-1(t)
//! ```
//!
//! Lagged errors only ever enter through differences, so adding the same
//! vector to `e_1k, ..., e_mk` is invisible to both the dynamics of the current
//! errors and the output. Those `nD` directions form an invariant, unobservable
//! subspace whose modes are pure shifts (eigenvalue 0). The controller is
//! designed on the quotient by that subspace; the full lifted spectrum is the
//! prescribed one plus `nD` zeros.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errorsys::{assemble_open_loop, ErrorSystem, LocalGains, OpenLoop};
use crate::linalg::{vstack, Mat};
use crate::model::{MultiChannelSystem, NeighborGraph};
use crate::sim::{assemble_closed_loop, decay_slope, log_slope, simulate_discrete, InitialState, SimTrace};
use crate::synth::{
    compensated_matrix, run_pipeline, validate_problem, ChannelController, ObserverGains, PipelineProblem,
    SpectrumSpec, SynthConfig, Synthesis,
};

/// Per-arc transmission delays, keyed by `(from, to)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelaySpec {
    arcs: BTreeMap<(usize, usize), usize>,
}

impl DelaySpec {
    /// Arcs of `g` missing from `delays` are delay-free.
    pub fn new(g: &NeighborGraph, delays: BTreeMap<(usize, usize), usize>) -> Result<Self> {
        for &(from, to) in delays.keys() {
            if !g.has_arc(from, to) {
                return Err(Error::invalid(format!("delay given for {} -> {}, which is not an arc", from + 1, to + 1)));
            }
        }
        let mut arcs = BTreeMap::new();
        for to in 0..g.m() {
            for from in g.others(to) {
                arcs.insert((from, to), delays.get(&(from, to)).copied().unwrap_or(0));
            }
        }
        Ok(Self { arcs })
    }

    pub fn uniform(g: &NeighborGraph, d: usize) -> Self {
        let mut arcs = BTreeMap::new();
        for to in 0..g.m() {
            for from in g.others(to) {
                arcs.insert((from, to), d);
            }
        }
        Self { arcs }
    }

    pub fn delay(&self, from: usize, to: usize) -> Option<usize> {
        self.arcs.get(&(from, to)).copied()
    }

    pub fn arcs(&self) -> &BTreeMap<(usize, usize), usize> {
        &self.arcs
    }

    /// The uniform lift order `D`.
    pub fn max_delay(&self) -> usize {
        self.arcs.values().copied().max().unwrap_or(0)
    }
}

/// Lifted open-loop error system. State ordering is per channel:
/// `e_1, e_11, ..., e_1D, e_2, e_21, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedErrorSystem {
    pub base: ErrorSystem,
    pub delay: usize,
    pub state: Mat,
    pub input: Mat,
    pub output: Mat,
    /// Orthonormal basis of the complement of the common lag directions.
    pub reduction: Mat,
}

impl LiftedErrorSystem {
    pub fn dim(&self) -> usize {
        self.state.nrows()
    }

    /// Open-loop system on the observable quotient.
    pub fn reduced(&self) -> OpenLoop {
        let v = &self.reduction;
        OpenLoop {
            state: v.transpose() * &self.state * v,
            input: v.transpose() * &self.input,
            output: &self.output * v,
            partition: self.base.open_loop.partition.clone(),
        }
    }
}

/// Row offset of `e_ik` in the lifted state.
pub fn lifted_offset(n: usize, d: usize, i: usize, k: usize) -> usize {
    (i * (d + 1) + k) * n
}

/// `nm(D+1) x nm` selector picking lag `k` of every channel.
fn lag_selector(n: usize, m: usize, d: usize, k: usize) -> Mat {
    let mut p = Mat::zeros(n * m * (d + 1), n * m);
    for i in 0..m {
        let r = lifted_offset(n, d, i, k);
        for l in 0..n {
            p[(r + l, i * n + l)] = 1.0;
        }
    }
    p
}

/// `m x (m-1)` orthonormal complement of the all-ones vector (Helmert basis).
fn ones_complement(m: usize) -> Mat {
    let mut w = Mat::zeros(m, m - 1);
    for c in 0..m - 1 {
        let k = (c + 1) as f64;
        let s = 1.0 / (k * (k + 1.0)).sqrt();
        for r in 0..=c {
            w[(r, c)] = s;
        }
        w[(c + 1, c)] = -k * s;
    }
    w
}

fn reduction_basis(n: usize, m: usize, d: usize) -> Mat {
    let total = n * m * (d + 1);
    if d == 0 {
        return Mat::identity(total, total);
    }
    let w = ones_complement(m);
    let cols = n * m + n * (m - 1) * d;
    let mut v = Mat::zeros(total, cols);
    let mut c = 0;
    for i in 0..m {
        for l in 0..n {
            v[(lifted_offset(n, d, i, 0) + l, c)] = 1.0;
            c += 1;
        }
    }
    for k in 1..=d {
        for r in 0..m - 1 {
            for l in 0..n {
                for i in 0..m {
                    v[(lifted_offset(n, d, i, k) + l, c)] = w[(i, r)];
                }
                c += 1;
            }
        }
    }
    v
}

/// Builds the lifted error system for local gains `(K~, H~)` and uniform lag
/// `dspec.max_delay()`. With `D = 0` this is exactly [`assemble_open_loop`].
pub fn lift_delayed_error_system(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    gains: &LocalGains,
    q: usize,
    dspec: &DelaySpec,
) -> Result<LiftedErrorSystem> {
    let base = assemble_open_loop(sys, g, feedback, gains, q)?;
    let d = dspec.max_delay();
    let (n, m) = (sys.n(), sys.m());
    if d == 0 {
        let ol = &base.open_loop;
        return Ok(LiftedErrorSystem {
            state: ol.state.clone(),
            input: ol.input.clone(),
            output: ol.output.clone(),
            reduction: Mat::identity(n * m, n * m),
            delay: 0,
            base,
        });
    }

    let mut current = base.atilde.clone();
    let mut neighbor = Mat::zeros(n * m, n * m);
    for i in 0..m {
        current += &base.btilde[i] * &gains.k[i] * &base.chat[i];
        if base.ctilde[i].nrows() > 0 {
            neighbor += &base.btilde[i] * gains.stacked_h(i, n) * &base.ctilde[i];
        }
    }
    let p0 = lag_selector(n, m, d, 0);
    let pd = lag_selector(n, m, d, d);
    let mut state = &p0 * current * p0.transpose() + &p0 * neighbor * pd.transpose();
    for i in 0..m {
        for k in 1..=d {
            let r = lifted_offset(n, d, i, k);
            let c = lifted_offset(n, d, i, k - 1);
            for l in 0..n {
                state[(r + l, c + l)] = 1.0;
            }
        }
    }
    let input = &p0 * &base.open_loop.input;
    let ol = &base.open_loop;
    let pm = ol.partition.measurement_dim;
    let meas = ol.output.rows(0, pm) * p0.transpose();
    let diff = ol.output.rows(pm, ol.output.nrows() - pm) * pd.transpose();
    let output = vstack(&[&meas, &diff]);
    Ok(LiftedErrorSystem {
        state,
        input,
        output,
        reduction: reduction_basis(n, m, d),
        delay: d,
        base,
    })
}

/// Lifted closed-loop error matrix over `(lifted errors, z)` for final gains.
pub fn lifted_error_dynamics(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    gains: &ObserverGains,
    dspec: &DelaySpec,
) -> Result<Mat> {
    let lifted = lift_delayed_error_system(sys, g, feedback, &gains.local(), gains.q, dspec)?;
    let full = OpenLoop {
        state: lifted.state,
        input: lifted.input,
        output: lifted.output,
        partition: gains.partition.clone(),
    };
    Ok(compensated_matrix(&full, &undelayed(gains)))
}

fn undelayed(gains: &ObserverGains) -> ChannelController {
    ChannelController {
        abar: gains.abar.clone(),
        bbar: gains.bbar.clone(),
        cbar: gains.cbar.clone(),
        dbar: Mat::zeros(gains.dbar.nrows(), gains.dbar.ncols()),
    }
}

/// Dimension of the quotient the controller is designed on.
pub fn design_dim(n: usize, m: usize, d: usize) -> usize {
    n * m + n * (m - 1) * d
}

/// Runs the synthesis pipeline on the lifted error system. `targets` must be
/// sized for [`design_dim`]; with `D = 0` this matches `synthesize` exactly.
pub fn synthesize_delayed(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    targets: &SpectrumSpec,
    q: usize,
    dspec: &DelaySpec,
    config: &SynthConfig,
) -> Result<Synthesis> {
    validate_problem(sys, g, feedback, q, config.rank_tol)?;
    let d = dspec.max_delay();
    let dim = design_dim(sys.n(), sys.m(), d);
    let want = config.mode.spectrum_len(dim, sys.m());
    if targets.len() != want {
        return Err(Error::invalid(format!(
            "{:?} mode needs {want} eigenvalues for the lifted system (n = {}, m = {}, D = {d}); got {}",
            config.mode,
            sys.n(),
            sys.m(),
            targets.len()
        )));
    }
    let build = |gains: &LocalGains| -> Result<OpenLoop> {
        Ok(lift_delayed_error_system(sys, g, feedback, gains, q, dspec)?.reduced())
    };
    let closed = |gains: &ObserverGains| -> Result<Mat> {
        let lifted = lift_delayed_error_system(sys, g, feedback, &gains.local(), q, dspec)?;
        Ok(compensated_matrix(&lifted.reduced(), &undelayed(gains)))
    };
    let problem = PipelineProblem {
        sys,
        g,
        q,
        delay: d,
        required_index: (d == 0).then_some(sys.m()),
        tree_allowed: d == 0,
        build: &build,
        closed_error: &closed,
    };
    run_pipeline(&problem, targets, config)
}

/// A delayed-network design problem.
#[derive(Debug, Clone)]
pub struct DelayScenario {
    pub sys: MultiChannelSystem,
    pub graph: NeighborGraph,
    pub feedback: Vec<Mat>,
    pub delays: DelaySpec,
}

/// Serialized form with 1-based vertex labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayScenarioFile {
    #[serde(flatten)]
    pub system: crate::io::SystemFile,
    /// `[from, to, delay]` triples.
    pub delays: Vec<[usize; 3]>,
}

impl DelayScenarioFile {
    pub fn into_scenario(self) -> Result<DelayScenario> {
        let (sys, graph, feedback) = self.system.into_parts()?;
        let feedback = feedback.unwrap_or_else(|| sys.zero_feedback());
        let mut map = BTreeMap::new();
        for [from, to, d] in self.delays {
            if from == 0 || to == 0 || from > graph.m() || to > graph.m() {
                return Err(Error::invalid(format!("delay arc {from} -> {to} outside 1..={}", graph.m())));
            }
            map.insert((from - 1, to - 1), d);
        }
        let delays = DelaySpec::new(&graph, map)?;
        Ok(DelayScenario {
            sys,
            graph,
            feedback,
            delays,
        })
    }
}

const DEMO_SCENARIO: &str = include_str!("../scenarios/delay_demo.json");

/// The bundled three-channel network with delays up to two steps.
pub fn demo_scenario() -> Result<DelayScenario> {
    let file: DelayScenarioFile = serde_json::from_str(DEMO_SCENARIO)
        .map_err(|e| Error::Internal(format!("bundled delay scenario: {e}")))?;
    file.into_scenario()
}

pub fn demo_scenario_json() -> &'static str {
    DEMO_SCENARIO
}

/// `count` points `rho * exp(2 pi i k / count)` evenly spaced on the circle
/// of radius `rho`. Clustered targets would make single-input placement
/// badly conditioned.
pub fn radius_spectrum(rho: f64, count: usize) -> Result<SpectrumSpec> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("radius {rho} must lie in (0, 1)")));
    }
    let values = (0..count)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / count as f64;
            let im = rho * t.sin();
            crate::linalg::C64::new(rho * t.cos(), if im.abs() < 1e-12 { 0.0 } else { im })
        })
        .collect();
    SpectrumSpec::new(values)
}

/// Error decay of a delayed design from plant state `x0` with every estimate,
/// lag and controller state at zero.
#[derive(Debug, Clone)]
pub struct DelayedDecay {
    /// Stacked closed-loop trace.
    pub trace: SimTrace,
    /// `‖e(t)‖` from iterating the lifted error system directly.
    pub norms: Vec<f64>,
    /// Largest entrywise gap between the two error trajectories.
    pub gap: f64,
    /// Geometric rate fitted to `norms` over the whole horizon.
    pub rate: Option<f64>,
    /// Rate fitted to the stacked trace, which recovers `e_i = x_i - x` by
    /// subtraction and so stops at rounding level.
    pub stacked_rate: Option<f64>,
}

pub fn delayed_error_decay(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    gains: &ObserverGains,
    dspec: &DelaySpec,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<DelayedDecay> {
    let (n, m, d) = (sys.n(), sys.m(), gains.delay);
    if d != dspec.max_delay() {
        return Err(Error::invalid(format!(
            "gains are lifted for delay {d}, the delay map needs {}",
            dspec.max_delay()
        )));
    }
    let cl = assemble_closed_loop(sys, feedback, gains, None)?;
    let trace = simulate_discrete(&cl, &InitialState::plant(x0.clone()), steps)?;
    let lifted = lifted_error_dynamics(sys, g, feedback, gains, dspec)?;

    // Past plant states are unknown, but the lags only enter through
    // differences, so any common value (here zero) gives the same e_i.
    let mut e = DVector::zeros(lifted.nrows());
    for i in 0..m {
        e.rows_mut(lifted_offset(n, d, i, 0), n).copy_from(&(-x0));
    }
    let mut norms = Vec::with_capacity(trace.len());
    let mut gap: f64 = 0.0;
    for k in 0..trace.len() {
        let mut sq = 0.0;
        for i in 0..m {
            let ei = e.rows(lifted_offset(n, d, i, 0), n);
            sq += ei.norm_squared();
            gap = gap.max((ei - trace.error(k, i)).amax());
        }
        norms.push(sq.sqrt());
        e = &lifted * e;
    }
    let peak = norms.iter().copied().fold(0.0, f64::max);
    let stacked_rate = decay_slope(&trace, 1e-9 * peak).map(f64::exp);
    let rate = log_slope(&trace.times, &norms, 1e-280).map(f64::exp);
    Ok(DelayedDecay {
        trace,
        norms,
        gap,
        rate,
        stacked_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{match_spectra, spectrum, C64};
    use crate::synth::draw_random_gains;

    fn scenario() -> DelayScenario {
        demo_scenario().unwrap()
    }

    #[test]
    fn demo_delays_match_description() {
        let s = scenario();
        assert_eq!(s.delays.delay(1, 0), Some(2));
        assert_eq!(s.delays.delay(2, 1), Some(0));
        assert_eq!(s.delays.delay(0, 1), Some(1));
        assert_eq!(s.delays.delay(1, 2), Some(2));
        assert_eq!(s.delays.max_delay(), 2);
    }

    #[test]
    fn zero_delay_is_the_plain_error_system() {
        let s = scenario();
        let gains = draw_random_gains(5, &s.sys, &s.graph);
        let lifted = lift_delayed_error_system(&s.sys, &s.graph, &s.feedback, &gains, 1, &DelaySpec::uniform(&s.graph, 0)).unwrap();
        let plain = assemble_open_loop(&s.sys, &s.graph, &s.feedback, &gains, 1).unwrap().open_loop;
        assert_eq!(lifted.state, plain.state);
        assert_eq!(lifted.output, plain.output);
        assert_eq!(lifted.reduced(), plain);
    }

    #[test]
    fn shift_rows_are_unit_selectors() {
        let s = scenario();
        let gains = draw_random_gains(5, &s.sys, &s.graph);
        let l = lift_delayed_error_system(&s.sys, &s.graph, &s.feedback, &gains, 0, &s.delays).unwrap();
        assert_eq!(l.dim(), 9);
        for i in 0..3 {
            for k in 1..=2 {
                let r = lifted_offset(1, 2, i, k);
                let c = lifted_offset(1, 2, i, k - 1);
                for col in 0..9 {
                    assert_eq!(l.state[(r, col)], if col == c { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn common_lag_directions_are_invariant_and_unobservable() {
        let s = scenario();
        let gains = draw_random_gains(8, &s.sys, &s.graph);
        let l = lift_delayed_error_system(&s.sys, &s.graph, &s.feedback, &gains, 2, &s.delays).unwrap();
        for k in 1..=2 {
            let mut u = Mat::zeros(9, 1);
            for i in 0..3 {
                u[(lifted_offset(1, 2, i, k), 0)] = 1.0;
            }
            assert!((&l.output * &u).abs().max() < 1e-15);
            let next = &l.state * &u;
            // Maps into the next common lag direction (or vanishes at D).
            let v = l.reduction.transpose() * next;
            assert!(v.abs().max() < 1e-14);
        }
        let r = &l.reduction;
        assert!((r.transpose() * r - Mat::identity(r.ncols(), r.ncols())).abs().max() < 1e-14);
    }

    #[test]
    fn quotient_spectrum_plus_zeros_is_full_spectrum() {
        let s = scenario();
        let gains = draw_random_gains(3, &s.sys, &s.graph);
        let l = lift_delayed_error_system(&s.sys, &s.graph, &s.feedback, &gains, 0, &s.delays).unwrap();
        let mut want = spectrum(&l.reduced().state).unwrap();
        want.extend([C64::new(0.0, 0.0); 2]);
        let got = spectrum(&l.state).unwrap();
        assert!(match_spectra(&got, &want).unwrap().max_mismatch < 1e-6);
    }

    #[test]
    fn arcs_outside_graph_are_rejected() {
        let s = scenario();
        let mut bad = BTreeMap::new();
        bad.insert((2, 0), 1);
        assert!(DelaySpec::new(&s.graph, bad).is_err());
    }

    #[test]
    fn radius_spectrum_bounds() {
        let s = radius_spectrum(0.5, 6).unwrap();
        assert!((s.max_modulus() - 0.5).abs() < 1e-15);
        assert!(s.values().iter().all(|z| (z.norm() - 0.5).abs() < 1e-15));
        assert!(s.split(3).is_ok());
        assert!(radius_spectrum(1.5, 3).is_err());
    }
}
