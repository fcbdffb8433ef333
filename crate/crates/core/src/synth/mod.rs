//! End-to-end synthesis of the distributed observer gains.
//!
//! 1. draw random local gains `K~_i`, `H~_ij`;
//! 2. optionally add a swept spanning-tree term to secure controllability
//!    index `m` from channel `q`;
//! 3. check the open-loop error system is controllable by `u_q` and
//!    observable through `y_q`;
//! 4. design the channel controller for the prescribed spectrum;
//! 5. fold `Db` into `K_q`, `H_qj` and slice `Bb` into `Kb`, `Hb_j`.

mod channel;
mod place;
mod spectrum_spec;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use channel::{
    compensated_matrix, design_channel_controller, ChannelController, CompensatorMode, MinimalSearch,
};
pub use place::{place_spectrum, Placement, PLACEMENT_TOL};
pub use spectrum_spec::{format_complex, parse_complex, Factor, SpectrumSpec};

use crate::error::{Error, Result, Stage};
use crate::errorsys::{assemble_open_loop, LocalGains, OpenLoop, OutputPartition};
use crate::linalg::{match_spectra, spectrum, Mat, SpectralMatch, C64, DEFAULT_RANK_TOL};
use crate::model::{check_feedback, check_joint, controllability_index, is_observable, MultiChannelSystem, NeighborGraph};
use crate::treegain::{gain_sweep, lift_tree_gains, neighbor_term, tree_gain_matrix};

/// SplitMix64 finalizer over `seed + stream * golden`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeGainPolicy {
    Never,
    /// Add the tree term only when the random draw fails verification.
    OnFailure,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub max_retries: usize,
    pub mode: CompensatorMode,
    pub tree_gain: TreeGainPolicy,
    pub rank_tol: f64,
    pub spectrum_tol: f64,
    pub minimal: MinimalSearch,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_retries: 8,
            mode: CompensatorMode::Full,
            tree_gain: TreeGainPolicy::OnFailure,
            rank_tol: DEFAULT_RANK_TOL,
            spectrum_tol: PLACEMENT_TOL,
            minimal: MinimalSearch::default(),
        }
    }
}

/// Complete gain set of the distributed observer with its channel controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub q: usize,
    pub mode: CompensatorMode,
    /// Uniform transmission-delay lift (0 for the delay-free design).
    pub delay: usize,
    pub k: Vec<Mat>,
    pub h: Vec<BTreeMap<usize, Mat>>,
    pub abar: Mat,
    pub bbar: Mat,
    pub cbar: Mat,
    pub dbar: Mat,
    pub partition: OutputPartition,
}

impl ObserverGains {
    pub fn compensator_order(&self) -> usize {
        self.abar.nrows()
    }

    /// `Kb`: the leading `p_q` columns of `Bb`.
    pub fn kbar(&self) -> Mat {
        self.bbar.columns(0, self.partition.measurement_dim).into_owned()
    }

    /// `Hb_j` for neighbor `j != q`.
    pub fn hbar(&self, j: usize) -> Option<Mat> {
        let off = self.partition.offset_of(j)?;
        Some(self.bbar.columns(off, self.partition.n).into_owned())
    }

    pub fn local(&self) -> LocalGains {
        LocalGains {
            k: self.k.clone(),
            h: self.h.clone(),
        }
    }
}

/// Seeded i.i.d. uniform `[-1, 1]` entries for every `K~_i` and `H~_ij`.
pub fn draw_random_gains(seed: u64, sys: &MultiChannelSystem, g: &NeighborGraph) -> LocalGains {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.n();
    let mut draw = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0));
    let k = (0..sys.m()).map(|i| draw(n, sys.output_dim(i))).collect();
    let h = (0..sys.m())
        .map(|i| g.others(i).map(|j| (j, draw(n, n))).collect())
        .collect();
    LocalGains { k, h }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub controllable: bool,
    pub controllability_index: Option<usize>,
    pub observable: bool,
    /// Index required for a pass, if any.
    pub required_index: Option<usize>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.controllable
            && self.observable
            && self.required_index.is_none_or(|k| self.controllability_index == Some(k))
    }
}

/// Controllability by the virtual input, its index, and observability
/// through the virtual output.
pub fn verify_open_loop(ol: &OpenLoop, required_index: Option<usize>, tol: f64) -> Result<VerificationReport> {
    let index = controllability_index(&ol.state, &ol.input, tol)?;
    let observable = is_observable(&ol.output, &ol.state, tol)?;
    Ok(VerificationReport {
        controllable: index.is_some(),
        controllability_index: index,
        observable,
        required_index,
    })
}

/// Folds `Db = [K^_q | H^_qj ...]` into channel `q` and attaches the controller.
pub fn assemble_final_gains(
    tilde: &LocalGains,
    ctrl: &ChannelController,
    partition: &OutputPartition,
    q: usize,
    mode: CompensatorMode,
    delay: usize,
) -> Result<ObserverGains> {
    let width = partition.total();
    if ctrl.dbar.ncols() != width || ctrl.bbar.ncols() != width {
        return Err(Error::dims(
            "controller output partition",
            width,
            format!("Db {} cols, Bb {} cols", ctrl.dbar.ncols(), ctrl.bbar.ncols()),
        ));
    }
    if q >= tilde.k.len() {
        return Err(Error::invalid(format!("channel q = {} out of range", q + 1)));
    }
    let n = partition.n;
    let p = partition.measurement_dim;
    if tilde.k[q].ncols() != p || ctrl.dbar.nrows() != tilde.k[q].nrows() {
        return Err(Error::dims("K_q", format!("{}x{p}", ctrl.dbar.nrows()), format!("{}x{}", tilde.k[q].nrows(), tilde.k[q].ncols())));
    }
    let mut k = tilde.k.clone();
    let mut h = tilde.h.clone();
    k[q] += ctrl.dbar.columns(0, p);
    for &j in &partition.neighbors {
        let off = partition.offset_of(j).expect("neighbor in partition");
        let blk = h[q]
            .get_mut(&j)
            .ok_or_else(|| Error::invalid(format!("H_{}{} missing", q + 1, j + 1)))?;
        *blk += ctrl.dbar.columns(off, n);
    }
    Ok(ObserverGains {
        q,
        mode,
        delay,
        k,
        h,
        abar: ctrl.abar.clone(),
        bbar: ctrl.bbar.clone(),
        cbar: ctrl.cbar.clone(),
        dbar: ctrl.dbar.clone(),
        partition: partition.clone(),
    })
}

/// Closed-loop error dynamics `(eps, z)` rebuilt from final gains: the open
/// loop with `(K, H)` plus the `Cb z` injection and `z' = Ab z + Bb y_q`.
pub fn error_dynamics(sys: &MultiChannelSystem, g: &NeighborGraph, feedback: &[Mat], gains: &ObserverGains) -> Result<Mat> {
    let es = assemble_open_loop(sys, g, feedback, &gains.local(), gains.q)?;
    let ctrl = ChannelController {
        abar: gains.abar.clone(),
        bbar: gains.bbar.clone(),
        cbar: gains.cbar.clone(),
        dbar: Mat::zeros(gains.dbar.nrows(), gains.dbar.ncols()),
    };
    Ok(compensated_matrix(&es.open_loop, &ctrl))
}

#[derive(Debug, Clone, Serialize)]
pub struct AttemptLog {
    pub attempt: usize,
    pub seed: u64,
    pub tree_gain: Option<f64>,
    pub verification: Option<VerificationReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub ok: bool,
    pub detail: String,
}

/// Machine-readable account of one synthesis run.
#[derive(Debug, Clone, Serialize)]
pub struct SynthesisReport {
    pub mode: CompensatorMode,
    /// 1-based channel carrying the controller.
    pub q: usize,
    pub delay: usize,
    pub seed: u64,
    pub chosen_seed: u64,
    pub attempts: Vec<AttemptLog>,
    pub swept_gain: Option<f64>,
    pub verification: VerificationReport,
    pub error_state_dim: usize,
    pub compensator_order: usize,
    pub target_spectrum: Vec<[f64; 2]>,
    pub achieved_spectrum: Vec<[f64; 2]>,
    pub max_spectral_mismatch: f64,
    pub max_pointwise_mismatch: f64,
    /// Full mode: `|T21| / |M|` for the closed loop `M` written in `(e, z - e)`.
    pub coupling_residual: Option<f64>,
    pub stages: Vec<StageOutcome>,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub gains: ObserverGains,
    pub report: SynthesisReport,
}

/// Relative size of the `(e, z - e)` coupling block tolerated in full mode.
pub const SEPARATION_TOL: f64 = 1e-10;

/// Spectrum of a full-order compensated loop `M = [M11 M12; M21 M22]`.
///
/// With `v = z - e` the loop becomes `[M11 + M12, M12; T21, M22 - M12]`
/// where `T21 = M21 + M22 - M11 - M12` vanishes in exact arithmetic, so the
/// spectrum is read off the two diagonal blocks. Eigenvalues of the whole
/// matrix are far less accurate when the two halves cluster. Also returns
/// `|T21| / |M|`.
pub fn separated_spectrum(m: &Mat) -> Result<(Vec<C64>, Option<f64>)> {
    let n = m.nrows() / 2;
    if m.nrows() != 2 * n || !m.is_square() {
        return Err(Error::dims("full-order closed loop", "2N x 2N", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let m11 = m.view((0, 0), (n, n));
    let m12 = m.view((0, n), (n, n));
    let m21 = m.view((n, 0), (n, n));
    let m22 = m.view((n, n), (n, n));
    let t21 = m21 + m22 - m11 - m12;
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut ev = spectrum(&(m11 + m12))?;
    ev.extend(spectrum(&(m22 - m12))?);
    crate::linalg::sort_complex(&mut ev);
    Ok((ev, Some(t21.norm() / scale)))
}

pub(crate) fn complex_pairs(v: &[C64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// Problem-specific hooks of the generic pipeline.
pub(crate) struct PipelineProblem<'a> {
    pub sys: &'a MultiChannelSystem,
    pub g: &'a NeighborGraph,
    pub q: usize,
    pub delay: usize,
    pub required_index: Option<usize>,
    pub tree_allowed: bool,
    pub build: &'a dyn Fn(&LocalGains) -> Result<OpenLoop>,
    pub closed_error: &'a dyn Fn(&ObserverGains) -> Result<Mat>,
}

pub(crate) fn run_pipeline(problem: &PipelineProblem<'_>, targets: &SpectrumSpec, config: &SynthConfig) -> Result<Synthesis> {
    let PipelineProblem { sys, g, q, .. } = *problem;
    let m = sys.m();
    let mut stages = Vec::new();
    let mut attempts = Vec::new();
    let tree_policy = if problem.tree_allowed { config.tree_gain } else { TreeGainPolicy::Never };

    let tree_part = if tree_policy == TreeGainPolicy::Never {
        None
    } else {
        let gm = tree_gain_matrix(g, q).map_err(|e| e.at_stage(Stage::TreeGain))?;
        let hhat = lift_tree_gains(g, &gm, sys.n()).map_err(|e| e.at_stage(Stage::TreeGain))?;
        let term = neighbor_term(g, &hhat, sys.n())?;
        Some((hhat, term))
    };

    let mut design_error = None;
    let mut chosen = None;
    for attempt in 0..=config.max_retries {
        let seed = derive_seed(config.seed, attempt as u64);
        let mut gains = draw_random_gains(seed, sys, g);
        let mut ol = (problem.build)(&gains)?;
        let mut verification = verify_open_loop(&ol, problem.required_index, config.rank_tol)?;
        let mut log = AttemptLog {
            attempt,
            seed,
            tree_gain: None,
            verification: Some(verification),
            error: None,
        };
        let want_tree = match tree_policy {
            TreeGainPolicy::Never => false,
            TreeGainPolicy::OnFailure => !verification.passed(),
            TreeGainPolicy::Always => true,
        };
        if let (true, Some((hhat, term))) = (want_tree, tree_part.as_ref()) {
            match gain_sweep(&ol.state, term, &ol.input, m, config.rank_tol) {
                Ok(gain) => {
                    for (hi, hhi) in gains.h.iter_mut().zip(hhat) {
                        for (j, blk) in hhi {
                            *hi.get_mut(j).expect("same neighbor sets") += blk * gain;
                        }
                    }
                    ol = (problem.build)(&gains)?;
                    verification = verify_open_loop(&ol, problem.required_index, config.rank_tol)?;
                    log.tree_gain = Some(gain);
                    log.verification = Some(verification);
                }
                Err(e) => log.error = Some(e.to_string()),
            }
        }
        if !verification.passed() {
            attempts.push(log);
            continue;
        }
        // A draw can verify yet give a badly conditioned placement problem;
        // the next draw is as good a starting point as this one.
        match design(problem, targets, config, &ol, &gains, seed) {
            Ok(done) => {
                attempts.push(log);
                chosen = Some((seed, ol, verification, done));
                break;
            }
            Err(e @ Error::Synthesis { .. }) => {
                log.error = Some(e.to_string());
                attempts.push(log);
                design_error = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let Some((chosen_seed, ol, verification, done)) = chosen else {
        return Err(design_error.unwrap_or_else(|| {
            Error::synthesis(
                Stage::Verification,
                format!(
                    "no gain draw passed open-loop verification after {} attempts",
                    config.max_retries + 1
                ),
            )
        }));
    };
    let Design {
        gains,
        achieved,
        matched,
        coupling_residual,
        stages: design_stages,
    } = done;
    stages.push(StageOutcome {
        stage: Stage::Verification,
        ok: true,
        detail: format!(
            "controllability index {:?}, observable, attempt {}",
            verification.controllability_index,
            attempts.len() - 1
        ),
    });
    stages.extend(design_stages);

    let swept_gain = attempts.last().and_then(|a| a.tree_gain);
    let report = SynthesisReport {
        mode: config.mode,
        q: q + 1,
        delay: problem.delay,
        seed: config.seed,
        chosen_seed,
        attempts,
        swept_gain,
        verification,
        error_state_dim: ol.state.nrows(),
        compensator_order: gains.compensator_order(),
        target_spectrum: complex_pairs(targets.values()),
        achieved_spectrum: complex_pairs(&achieved),
        max_spectral_mismatch: matched.max_mismatch,
        max_pointwise_mismatch: matched.max_pointwise,
        coupling_residual,
        stages,
    };
    Ok(Synthesis { gains, report })
}

struct Design {
    gains: ObserverGains,
    achieved: Vec<C64>,
    matched: SpectralMatch,
    coupling_residual: Option<f64>,
    stages: Vec<StageOutcome>,
}

/// Channel controller, gain assembly and spectrum check for one verified draw.
fn design(
    problem: &PipelineProblem<'_>,
    targets: &SpectrumSpec,
    config: &SynthConfig,
    ol: &OpenLoop,
    tilde: &LocalGains,
    seed: u64,
) -> Result<Design> {
    let mut stages = Vec::new();
    let ctrl = design_channel_controller(ol, targets, config.mode, seed, config.spectrum_tol, config.minimal)?;
    stages.push(StageOutcome {
        stage: Stage::ChannelController,
        ok: true,
        detail: format!("order {}", ctrl.order()),
    });

    let gains = assemble_final_gains(tilde, &ctrl, &ol.partition, problem.q, config.mode, problem.delay)?;
    stages.push(StageOutcome {
        stage: Stage::Assembly,
        ok: true,
        detail: "K_q, H_qj corrected by Db; Kb, Hb_j sliced from Bb".into(),
    });

    let closed = (problem.closed_error)(&gains)?;
    let (achieved, coupling_residual) = match config.mode {
        CompensatorMode::Full => separated_spectrum(&closed)?,
        CompensatorMode::Minimal => (spectrum(&closed)?, None),
    };
    let matched = match_spectra(&achieved, targets.values())?;
    let tol = match config.mode {
        CompensatorMode::Full => config.spectrum_tol,
        CompensatorMode::Minimal => config.minimal.threshold,
    };
    if let Some(r) = coupling_residual.filter(|&r| r > SEPARATION_TOL) {
        return Err(Error::synthesis(
            Stage::SpectrumCheck,
            format!("closed loop is not block triangular in (e, z - e): coupling residual {r:.3e} exceeds {SEPARATION_TOL:.0e}"),
        ));
    }
    if matched.max_mismatch > tol {
        return Err(Error::synthesis(
            Stage::SpectrumCheck,
            format!("achieved spectrum mismatch {:.3e} exceeds {tol:.1e}", matched.max_mismatch),
        ));
    }
    stages.push(StageOutcome {
        stage: Stage::SpectrumCheck,
        ok: true,
        detail: match coupling_residual {
            Some(r) => format!(
                "max mismatch {:.3e} (tolerance {tol:.1e}), coupling residual {r:.1e}",
                matched.max_mismatch
            ),
            None => format!("max mismatch {:.3e} (tolerance {tol:.1e})", matched.max_mismatch),
        },
    });
    Ok(Design {
        gains,
        achieved,
        matched,
        coupling_residual,
        stages,
    })
}

pub(crate) fn validate_problem(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    q: usize,
    rank_tol: f64,
) -> Result<()> {
    let report = check_joint(sys, rank_tol)?;
    if !report.passed() {
        return Err(Error::invalid(format!(
            "plant violates structural assumptions: {}",
            report.violations.join("; ")
        )));
    }
    if g.m() != sys.m() {
        return Err(Error::dims("graph vertex count", sys.m(), g.m()));
    }
    if !g.is_strongly_connected() {
        return Err(Error::invalid("neighbor graph is not strongly connected"));
    }
    if q >= sys.m() {
        return Err(Error::invalid(format!("channel q = {} outside 1..={}", q + 1, sys.m())));
    }
    check_feedback(sys, feedback)
}

/// Synthesizes observer gains whose closed-loop error spectrum is `targets`.
///
/// `targets` must hold `2nm` values in full mode and `nm + m - 1` in minimal
/// mode. `feedback = 0` gives the plain distributed observer.
pub fn synthesize(
    sys: &MultiChannelSystem,
    g: &NeighborGraph,
    feedback: &[Mat],
    targets: &SpectrumSpec,
    q: usize,
    config: &SynthConfig,
) -> Result<Synthesis> {
    validate_problem(sys, g, feedback, q, config.rank_tol)?;
    let dim = sys.n() * sys.m();
    let want = config.mode.spectrum_len(dim, sys.m());
    if targets.len() != want {
        return Err(Error::invalid(format!(
            "{:?} mode needs {want} eigenvalues for n = {}, m = {}; got {}",
            config.mode,
            sys.n(),
            sys.m(),
            targets.len()
        )));
    }
    let build = |gains: &LocalGains| -> Result<OpenLoop> {
        Ok(assemble_open_loop(sys, g, feedback, gains, q)?.open_loop)
    };
    let closed = |gains: &ObserverGains| error_dynamics(sys, g, feedback, gains);
    let problem = PipelineProblem {
        sys,
        g,
        q,
        delay: 0,
        required_index: Some(sys.m()),
        tree_allowed: true,
        build: &build,
        closed_error: &closed,
    };
    run_pipeline(&problem, targets, config)
}
