//! Channel controller `u = Cb z + Db y`, `z' = Ab z + Bb y` closing the loop
//! around an open-loop error system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::place::place_spectrum;
use super::{derive_seed, SpectrumSpec};
use crate::error::{Error, Result, Stage};
use crate::errorsys::OpenLoop;
use crate::linalg::{match_spectra, spectrum, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompensatorMode {
    /// Observer-based compensator of the same order as the error system.
    Full,
    /// Compensator of order `|spectrum| - dim`, found by numerical search.
    Minimal,
}

impl CompensatorMode {
    /// Number of target eigenvalues this mode consumes for an error system of
    /// dimension `dim` over `m` channels.
    pub fn spectrum_len(self, dim: usize, m: usize) -> usize {
        match self {
            CompensatorMode::Full => 2 * dim,
            CompensatorMode::Minimal => dim + m - 1,
        }
    }
}

impl std::str::FromStr for CompensatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(CompensatorMode::Full),
            "minimal" => Ok(CompensatorMode::Minimal),
            other => Err(Error::invalid(format!("unknown mode '{other}' (expected full or minimal)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelController {
    pub abar: Mat,
    pub bbar: Mat,
    pub cbar: Mat,
    pub dbar: Mat,
}

impl ChannelController {
    pub fn order(&self) -> usize {
        self.abar.nrows()
    }
}

/// Settings for the minimal-order search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimalSearch {
    pub starts: usize,
    pub threshold: f64,
    pub max_iters: usize,
}

impl Default for MinimalSearch {
    fn default() -> Self {
        Self {
            starts: 16,
            threshold: 1e-3,
            max_iters: 400,
        }
    }
}

/// State matrix of the open-loop error system closed by `ctrl`.
pub fn compensated_matrix(ol: &OpenLoop, ctrl: &ChannelController) -> Mat {
    let nx = ol.state.nrows();
    let nz = ctrl.order();
    let mut out = Mat::zeros(nx + nz, nx + nz);
    out.view_mut((0, 0), (nx, nx))
        .copy_from(&(&ol.state + &ol.input * &ctrl.dbar * &ol.output));
    if nz > 0 {
        out.view_mut((0, nx), (nx, nz)).copy_from(&(&ol.input * &ctrl.cbar));
        out.view_mut((nx, 0), (nz, nx)).copy_from(&(&ctrl.bbar * &ol.output));
        out.view_mut((nx, nx), (nz, nz)).copy_from(&ctrl.abar);
    }
    out
}

pub fn design_channel_controller(
    ol: &OpenLoop,
    targets: &SpectrumSpec,
    mode: CompensatorMode,
    seed: u64,
    placement_tol: f64,
    search: MinimalSearch,
) -> Result<ChannelController> {
    match mode {
        CompensatorMode::Full => design_full(ol, targets, seed, placement_tol),
        CompensatorMode::Minimal => design_minimal(ol, targets, seed, search),
    }
}

fn design_full(ol: &OpenLoop, targets: &SpectrumSpec, seed: u64, tol: f64) -> Result<ChannelController> {
    let dim = ol.state.nrows();
    if targets.len() != 2 * dim {
        return Err(Error::invalid(format!(
            "full mode needs {} eigenvalues, got {}",
            2 * dim,
            targets.len()
        )));
    }
    let (state_part, observer_part) = targets.split(dim)?;
    let fe = place_spectrum(&ol.state, &ol.input, &state_part, derive_seed(seed, 101), tol)
        .map_err(|e| e.at_stage(Stage::ChannelController))?
        .gain;
    let ld = place_spectrum(
        &ol.state.transpose(),
        &ol.output.transpose(),
        &observer_part,
        derive_seed(seed, 102),
        tol,
    )
    .map_err(|e| e.at_stage(Stage::ChannelController))?
    .gain;
    let l = ld.transpose();
    let abar = &ol.state + &ol.input * &fe + &l * &ol.output;
    Ok(ChannelController {
        abar,
        bbar: -l,
        dbar: Mat::zeros(ol.input.ncols(), ol.output.nrows()),
        cbar: fe,
    })
}

/// Characteristic polynomial coefficients `[c_0, ..., c_{n-1}]` of the monic
/// `det(sI - M)` via Faddeev-LeVerrier.
fn char_poly(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut mk = Mat::zeros(n, n);
    let eye = Mat::identity(n, n);
    for k in 1..=n {
        mk = m * &mk + &eye * coeffs[n - k + 1];
        coeffs[n - k] = -(m * &mk).trace() / k as f64;
    }
    coeffs.truncate(n);
    coeffs
}

fn target_poly(targets: &SpectrumSpec) -> Vec<f64> {
    // Multiply out the real factors; start from the constant 1.
    let mut p = vec![1.0];
    for f in targets.factors() {
        let q: Vec<f64> = match *f {
            super::Factor::Real(l) => vec![-l, 1.0],
            super::Factor::Pair(z) => vec![z.norm_sqr(), -2.0 * z.re, 1.0],
        };
        let mut out = vec![0.0; p.len() + q.len() - 1];
        for (i, a) in p.iter().enumerate() {
            for (j, b) in q.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        p = out;
    }
    p.pop();
    p
}

struct Layout {
    nz: usize,
    nu: usize,
    ny: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.nz * self.nz + self.nz * self.ny + self.nu * self.nz + self.nu * self.ny
    }

    fn unpack(&self, theta: &[f64]) -> ChannelController {
        let Layout { nz, nu, ny } = *self;
        let mut k = 0;
        let mut take = |r: usize, c: usize| {
            let m = Mat::from_column_slice(r, c, &theta[k..k + r * c]);
            k += r * c;
            m
        };
        ChannelController {
            abar: take(nz, nz),
            bbar: take(nz, ny),
            cbar: take(nu, nz),
            dbar: take(nu, ny),
        }
    }
}

fn residual(ol: &OpenLoop, layout: &Layout, theta: &[f64], target: &[f64]) -> Vec<f64> {
    let cl = compensated_matrix(ol, &layout.unpack(theta));
    char_poly(&cl)
        .iter()
        .zip(target)
        .map(|(c, t)| (c - t) / (1.0 + t.abs()))
        .collect()
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt on the characteristic-polynomial residual with a
/// forward-difference Jacobian.
fn levenberg_marquardt(ol: &OpenLoop, layout: &Layout, mut theta: Vec<f64>, target: &[f64], max_iters: usize) -> Vec<f64> {
    let p = theta.len();
    let mut r = residual(ol, layout, &theta, target);
    let mut c = cost(&r);
    let mut damping = 1e-3;
    for _ in 0..max_iters {
        if c < 1e-26 || !c.is_finite() {
            break;
        }
        let nr = r.len();
        let mut jac = Mat::zeros(nr, p);
        for k in 0..p {
            let h = 1e-7 * theta[k].abs().max(1.0);
            let mut t2 = theta.clone();
            t2[k] += h;
            let r2 = residual(ol, layout, &t2, target);
            for i in 0..nr {
                jac[(i, k)] = (r2[i] - r[i]) / h;
            }
        }
        let rv = nalgebra::DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut lhs = jtj.clone();
            for k in 0..p {
                lhs[(k, k)] += damping * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = lhs.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rc = residual(ol, layout, &cand, target);
            let cc = cost(&rc);
            if cc.is_finite() && cc < c {
                theta = cand;
                r = rc;
                c = cc;
                damping = (damping / 3.0).max(1e-12);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    theta
}

fn design_minimal(ol: &OpenLoop, targets: &SpectrumSpec, seed: u64, search: MinimalSearch) -> Result<ChannelController> {
    let dim = ol.state.nrows();
    if targets.len() < dim {
        return Err(Error::invalid(format!(
            "minimal mode needs at least {dim} eigenvalues, got {}",
            targets.len()
        )));
    }
    let layout = Layout {
        nz: targets.len() - dim,
        nu: ol.input.ncols(),
        ny: ol.output.nrows(),
    };
    let target = target_poly(targets);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 201));
    let mut best = f64::INFINITY;
    for _ in 0..search.starts {
        let theta0: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = levenberg_marquardt(ol, &layout, theta0, &target, search.max_iters);
        let ctrl = layout.unpack(&theta);
        let Ok(achieved) = spectrum(&compensated_matrix(ol, &ctrl)) else {
            continue;
        };
        let mismatch = match_spectra(&achieved, targets.values())?.max_pointwise;
        if mismatch < search.threshold {
            return Ok(ctrl);
        }
        best = best.min(mismatch);
    }
    Err(Error::synthesis(
        Stage::ChannelController,
        format!(
            "minimal-order search did not converge (best spectral mismatch {best:.3e} over {} starts); use full mode instead",
            search.starts
        ),
    ))
}
