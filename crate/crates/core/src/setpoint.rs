//! Set-point regulation of scalar-output channels through local integrators
//! `w_i' = y_i - r_i`.
//!
//! The augmented state `(x, w)` evolves as
//! `[A 0; C 0] (x, w) + sum_i [B_i; 0] u_i - (0, r)`, and channel `i`
//! measures its own integrator `w_i`. Stabilizing
//! the reference-free augmented system is enough: at the equilibrium every
//! `w_i' = 0`, so every `y_i = r_i`. The estimates need not converge to the
//! augmented state.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SystemFile;
use crate::linalg::{numerical_rank, vstack, hstack, Mat, C64};
use crate::model::{MultiChannelSystem, NeighborGraph};
use crate::sim::{assemble_closed_loop, simulate_continuous, ClosedLoop, InitialState, SimTrace};
use crate::synth::{derive_seed, place_spectrum, synthesize, SpectrumSpec, SynthConfig, Synthesis};

#[derive(Debug, Clone)]
pub struct SetpointProblem {
    pub sys: MultiChannelSystem,
    pub r: Vec<f64>,
}

impl SetpointProblem {
    pub fn new(sys: MultiChannelSystem, r: Vec<f64>) -> Result<Self> {
        for i in 0..sys.m() {
            if sys.output_dim(i) != 1 {
                return Err(Error::invalid(format!(
                    "set-point control needs scalar outputs; C_{} has {} rows",
                    i + 1,
                    sys.output_dim(i)
                )));
            }
        }
        if r.len() != sys.m() {
            return Err(Error::dims("set-point vector r", sys.m(), r.len()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("set-points must be finite"));
        }
        Ok(Self { sys, r })
    }
}

/// Largest accepted `|y_i(T) - r_i|` when reporting a tracking run.
pub const TRACKING_TOL: f64 = 1e-4;

/// Set-point scenario: plant and graph, references and design choices.
/// Spectra are comma lists as accepted by [`SpectrumSpec::parse`]; when
/// absent, the observer spectrum is [`default_spectrum`] at `rate` and the
/// feedback spectrum is [`default_spectrum`] at `2 rate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetpointFile {
    #[serde(flatten)]
    pub system: SystemFile,
    pub r: Vec<f64>,
    #[serde(default = "unit_rate")]
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_spectrum: Option<String>,
    /// 1-based channel carrying the compensator.
    #[serde(default = "first_channel")]
    pub q: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn unit_rate() -> f64 {
    1.0
}

fn first_channel() -> usize {
    1
}

/// A parsed [`SetpointFile`].
#[derive(Debug, Clone)]
pub struct SetpointScenario {
    pub problem: SetpointProblem,
    pub graph: NeighborGraph,
    pub feedback_spectrum: SpectrumSpec,
    pub spectrum: SpectrumSpec,
    /// 0-based.
    pub q: usize,
    pub x0: DVector<f64>,
}

impl SetpointFile {
    pub fn into_scenario(self) -> Result<SetpointScenario> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid(format!("rate {} must be positive", self.rate)));
        }
        let (sys, graph, _) = self.system.into_parts()?;
        let (n, m) = (sys.n(), sys.m());
        if self.q == 0 || self.q > m {
            return Err(Error::invalid(format!("q = {} is not a channel in 1..={m}", self.q)));
        }
        let x0 = match self.x0 {
            Some(v) if v.len() != n => return Err(Error::dims("x0", n, v.len())),
            Some(v) => DVector::from_vec(v),
            None => DVector::zeros(n),
        };
        let na = n + m;
        let spectrum = match &self.spectrum {
            Some(text) => SpectrumSpec::parse(text)?,
            None => default_spectrum(self.rate, 2 * na * m)?,
        };
        let feedback_spectrum = match &self.feedback_spectrum {
            Some(text) => SpectrumSpec::parse(text)?,
            None => default_spectrum(2.0 * self.rate, na)?,
        };
        Ok(SetpointScenario {
            problem: SetpointProblem::new(sys, self.r)?,
            graph,
            feedback_spectrum,
            spectrum,
            q: self.q - 1,
            x0,
        })
    }
}

/// The augmented plant and its constant forcing `-(0, r)`.
pub fn augment_with_integrators(p: &SetpointProblem) -> Result<(MultiChannelSystem, DVector<f64>)> {
    let sys = &p.sys;
    let n = sys.n();
    let m = sys.m();
    let c = sys.stacked_c();
    let mut a = Mat::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(sys.a());
    a.view_mut((n, 0), (m, n)).copy_from(&c);
    let b = (0..m)
        .map(|i| vstack(&[sys.b(i), &Mat::zeros(m, sys.input_dim(i))]))
        .collect();
    let outputs = (0..m)
        .map(|i| {
            let mut row = Mat::zeros(1, n + m);
            row[(0, n + i)] = 1.0;
            row
        })
        .collect();
    let aug = MultiChannelSystem::new(a, b, outputs)?;
    let mut forcing = DVector::zeros(n + m);
    for (i, r) in p.r.iter().enumerate() {
        forcing[n + i] = -r;
    }
    Ok((aug, forcing))
}

/// `rank [A B; C 0] = n + m`, the condition for the augmented plant to be
/// jointly controllable.
pub fn setpoint_feasible(p: &SetpointProblem, tol: f64) -> Result<bool> {
    let sys = &p.sys;
    let n = sys.n();
    let m = sys.m();
    let b = sys.stacked_b();
    let top = hstack(&[sys.a(), &b]);
    let bottom = hstack(&[&sys.stacked_c(), &Mat::zeros(m, b.ncols())]);
    Ok(numerical_rank(&vstack(&[&top, &bottom]), tol)? == n + m)
}

/// `count` reals evenly spaced over `[-2 rate, -rate]`, listed as the
/// even-indexed points followed by the odd-indexed ones so that both halves
/// of the list span the whole interval.
pub fn default_spectrum(rate: f64, count: usize) -> Result<SpectrumSpec> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("rate {rate} must be positive")));
    }
    let point = |k: usize| {
        let t = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
        C64::new(-rate * (1.0 + t), 0.0)
    };
    let values = (0..count)
        .step_by(2)
        .chain((1..count).step_by(2))
        .map(point)
        .collect();
    SpectrumSpec::new(values)
}

#[derive(Debug, Clone)]
pub struct SetpointDesign {
    pub augmented: MultiChannelSystem,
    pub forcing: DVector<f64>,
    /// `F_i` acting on the augmented estimate.
    pub feedback: Vec<Mat>,
    pub synthesis: Synthesis,
    /// `20 / |Re λ|` for the slowest prescribed eigenvalue.
    pub horizon: f64,
}

impl SetpointDesign {
    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        assemble_closed_loop(&self.augmented, &self.feedback, &self.synthesis.gains, Some(&self.forcing))
    }
}

fn require_stable(s: &SpectrumSpec, what: &str) -> Result<()> {
    if s.max_real_part() >= 0.0 {
        return Err(Error::invalid(format!(
            "{what} must lie strictly in the open left half plane (max real part {})",
            s.max_real_part()
        )));
    }
    Ok(())
}

/// Places `spec(A_aug + sum B_aug,i F_i) = feedback_spectrum`, then
/// synthesizes observer gains for `targets` on the augmented plant.
pub fn design_setpoint_controller(
    p: &SetpointProblem,
    g: &NeighborGraph,
    feedback_spectrum: &SpectrumSpec,
    targets: &SpectrumSpec,
    q: usize,
    config: &SynthConfig,
) -> Result<SetpointDesign> {
    require_stable(feedback_spectrum, "feedback spectrum")?;
    require_stable(targets, "observer spectrum")?;
    if !setpoint_feasible(p, config.rank_tol)? {
        return Err(Error::invalid(
            "set-point problem is infeasible: rank [A B; C 0] < n + m, so the integrator-augmented plant is not jointly controllable",
        ));
    }
    let (aug, forcing) = augment_with_integrators(p)?;
    let placed = place_spectrum(
        aug.a(),
        &aug.stacked_b(),
        feedback_spectrum,
        derive_seed(config.seed, 301),
        config.spectrum_tol,
    )?;
    let mut feedback = Vec::with_capacity(aug.m());
    let mut row = 0;
    for i in 0..aug.m() {
        let k = aug.input_dim(i);
        feedback.push(placed.gain.rows(row, k).into_owned());
        row += k;
    }
    let synthesis = synthesize(&aug, g, &feedback, targets, q, config)?;
    let slowest = feedback_spectrum.max_real_part().max(targets.max_real_part());
    Ok(SetpointDesign {
        augmented: aug,
        forcing,
        feedback,
        synthesis,
        horizon: 20.0 / slowest.abs(),
    })
}

#[derive(Debug, Clone)]
pub struct TrackingResult {
    pub trace: SimTrace,
    /// `|c_i x(T) - r_i|` per channel.
    pub errors: Vec<f64>,
}

/// Simulates the regulated loop to `design.horizon` from plant state `x0`
/// (integrators, estimates and controller start at zero).
pub fn simulate_tracking(p: &SetpointProblem, design: &SetpointDesign, x0: &DVector<f64>, h: Option<f64>) -> Result<TrackingResult> {
    let n = p.sys.n();
    if x0.len() != n {
        return Err(Error::dims("x0", n, x0.len()));
    }
    let cl = design.closed_loop()?;
    let mut xa = DVector::zeros(n + p.sys.m());
    xa.rows_mut(0, n).copy_from(x0);
    let trace = simulate_continuous(&cl, &InitialState::plant(xa), design.horizon, h)?;
    let last = trace.x.last().expect("trace has the initial row");
    let x = last.rows(0, n);
    let errors = (0..p.sys.m())
        .map(|i| ((p.sys.c(i) * x)[0] - p.r[i]).abs())
        .collect();
    Ok(TrackingResult { trace, errors })
}
