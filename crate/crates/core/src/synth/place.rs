//! Eigenvalue assignment by state feedback.
//!
//! Multi-input pairs first go through an eigenvector method: each closed-loop
//! eigenvector is chosen in its admissible subspace `ker U1'(A - λI)` and the
//! set is iteratively rotated towards orthogonality (Kautsky, Nichols and
//! Van Dooren), which keeps the assigned eigenvalues well conditioned.
//!
//! Single-input pairs, and multi-input pairs where that method falls short,
//! use Ackermann's formula in controller-Hessenberg coordinates built from an
//! orthonormal Krylov basis, where the Krylov matrix is triangular. A
//! multi-input pair is reduced to single input through a random direction `w`,
//! retried with a fresh direction whenever the reduction is uncontrollable or
//! inaccurate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SpectrumSpec;
use crate::error::{Error, Result, Stage};
use crate::linalg::{complement, ensure_finite, match_spectra, spectrum, Mat, C64};
use crate::model::is_controllable;

/// Directions tried for multi-input reduction before giving up.
const MAX_DIRECTIONS: usize = 24;

/// Default relative matching tolerance for placed spectra.
pub const PLACEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Placement {
    /// Feedback `F` such that `A + B F` has the requested spectrum.
    pub gain: Mat,
    pub mismatch: f64,
    /// Single-input directions tried; 0 when the eigenvector method succeeded.
    pub directions_tried: usize,
}

/// Orthonormal Krylov basis `Q` with `Q' A Q = H` upper Hessenberg and
/// `Q' b = beta e_1`. Returns `None` if the Krylov sequence breaks down.
fn controller_hessenberg(a: &Mat, b: &DVector<f64>) -> Option<(Mat, Mat, f64)> {
    let n = a.nrows();
    let beta = b.norm();
    if beta == 0.0 {
        return None;
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut q = Mat::zeros(n, n);
    let mut h = Mat::zeros(n, n);
    q.set_column(0, &(b / beta));
    for k in 0..n {
        let mut w = a * q.column(k);
        // Two passes of Gram-Schmidt.
        for _ in 0..2 {
            for j in 0..=k {
                let c = q.column(j).dot(&w);
                w -= q.column(j) * c;
                h[(j, k)] += c;
            }
        }
        if k + 1 < n {
            let nw = w.norm();
            if nw <= 1e-12 * scale {
                return None;
            }
            h[(k + 1, k)] = nw;
            q.set_column(k + 1, &(w / nw));
        }
    }
    Some((q, h, beta))
}

/// Single-input placement `f` (1 x n) with `spec(A + b f) = targets`.
fn place_single(a: &Mat, b: &DVector<f64>, targets: &SpectrumSpec) -> Option<Mat> {
    let n = a.nrows();
    let (q, h, beta) = controller_hessenberg(a, b)?;
    // r = e_n' p(H), evaluated factor by factor.
    let mut r = Mat::zeros(1, n);
    r[(0, n - 1)] = 1.0;
    for factor in targets.factors() {
        r = match factor {
            super::Factor::Real(l) => &r * &h - &r * *l,
            super::Factor::Pair(z) => {
                let rh = &r * &h;
                &rh * &h - &rh * (2.0 * z.re) + &r * z.norm_sqr()
            }
        };
    }
    let mut denom = beta;
    for k in 0..n - 1 {
        denom *= h[(k + 1, k)];
    }
    let fhat = r / -denom;
    Some(fhat * q.transpose())
}

type CMat = DMatrix<C64>;

/// Sweeps of the eigenvector update.
const MAX_SWEEPS: usize = 40;

fn to_complex(m: &Mat) -> CMat {
    m.map(|v| C64::new(v, 0.0))
}

/// Orthonormal basis of the null space of a full-row-rank `N`.
fn kernel(nm: &CMat) -> CMat {
    let rows = nm.adjoint().qr().q();
    complement(&rows)
}

/// Eigenvector-based multi-input placement. `None` when the construction
/// breaks down (for instance a target repeated more often than rank `B`).
fn place_robust(a: &Mat, b: &Mat, targets: &SpectrumSpec, rng: &mut ChaCha8Rng) -> Option<Mat> {
    let n = a.nrows();
    let svd = b.clone().svd(true, false);
    let u = svd.u.as_ref()?;
    let smax = svd.singular_values.max();
    let cut = 1e-10 * smax * n.max(b.ncols()) as f64;
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > cut).collect();
    let r = keep.len();
    if r == 0 {
        return None;
    }
    let pinv = b.clone().pseudo_inverse(cut).ok()?;
    if r == n {
        let mut m = Mat::zeros(n, n);
        let mut k = 0;
        for f in targets.factors() {
            match *f {
                super::Factor::Real(l) => {
                    m[(k, k)] = l;
                    k += 1;
                }
                super::Factor::Pair(z) => {
                    m[(k, k)] = z.re;
                    m[(k + 1, k + 1)] = z.re;
                    m[(k, k + 1)] = z.im;
                    m[(k + 1, k)] = -z.im;
                    k += 2;
                }
            }
        }
        return Some(pinv * (m - a));
    }
    let u0 = Mat::from_fn(n, r, |i, j| u[(i, keep[j])]);
    let u1 = to_complex(&complement(&u0)).adjoint();
    let ac = to_complex(a);

    // Column layout: a real target takes one column, a pair takes two with
    // the second the conjugate of the first.
    let mut poles = Vec::with_capacity(n);
    let mut kernels = Vec::new();
    let mut leads = Vec::new();
    for f in targets.factors() {
        let l = match *f {
            super::Factor::Real(l) => C64::new(l, 0.0),
            super::Factor::Pair(z) => z,
        };
        let shifted = &ac - CMat::identity(n, n) * l;
        let ker = kernel(&(&u1 * shifted));
        if ker.ncols() != r {
            return None;
        }
        leads.push((poles.len(), f.degree() == 2));
        kernels.push(ker);
        poles.push(l);
        if f.degree() == 2 {
            poles.push(l.conj());
        }
    }

    let mut x = CMat::zeros(n, n);
    for ((col, pair), ker) in leads.iter().zip(&kernels) {
        let c = DVector::from_fn(r, |_, _| C64::new(rng.random_range(-1.0..1.0), 0.0));
        let v = ker * c;
        let v = &v / C64::new(v.norm(), 0.0);
        x.set_column(*col, &v);
        if *pair {
            x.set_column(col + 1, &v.conjugate());
        }
    }

    let mut last = 0.0;
    for _ in 0..MAX_SWEEPS {
        for ((col, pair), ker) in leads.iter().zip(&kernels) {
            let others = x.clone().remove_column(*col);
            let basis = others.qr().q();
            let y = complement(&basis).column(0).into_owned();
            let v = ker * (ker.adjoint() * y);
            let nv = v.norm();
            if nv < 1e-12 {
                continue;
            }
            let v = v / C64::new(nv, 0.0);
            x.set_column(*col, &v);
            if *pair {
                x.set_column(col + 1, &v.conjugate());
            }
        }
        let det = x.clone().lu().determinant().norm();
        if (det - last).abs() <= 1e-6 * det {
            break;
        }
        last = det;
    }

    let xinv = x.clone().try_inverse()?;
    let lam = CMat::from_diagonal(&DVector::from_vec(poles));
    let mc = &x * lam * xinv;
    let m = mc.map(|z| z.re);
    if mc.iter().any(|z| !z.im.is_finite() || z.im.abs() > 1e-6 * (1.0 + m.norm())) {
        return None;
    }
    Some(pinv * (m - a))
}

/// Computes `F` with `spec(A + B F)` equal to `targets` within `tol`
/// (relative to `max(|lambda|, 1)`).
pub fn place_spectrum(a: &Mat, b: &Mat, targets: &SpectrumSpec, seed: u64, tol: f64) -> Result<Placement> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(Error::dims("placement A", "nonempty square", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::dims("placement B", format!("{n}xr"), format!("{}x{}", b.nrows(), b.ncols())));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!(
            "placement needs {n} target eigenvalues, got {}",
            targets.len()
        )));
    }
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    if !is_controllable(a, b, crate::linalg::DEFAULT_RANK_TOL)? {
        return Err(Error::synthesis(Stage::Placement, "pair is not controllable; spectrum cannot be assigned"));
    }

    let r = b.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Placement> = None;
    if r > 1 {
        if let Some(gain) = place_robust(a, b, targets, &mut rng).filter(|f| f.iter().all(|v| v.is_finite())) {
            let achieved = spectrum(&(a + b * &gain))?;
            let mismatch = match_spectra(&achieved, targets.values())?.max_mismatch;
            let cand = Placement {
                gain,
                mismatch,
                directions_tried: 0,
            };
            if mismatch <= tol {
                return Ok(cand);
            }
            best = Some(cand);
        }
    }
    let tries = if r == 1 { 1 } else { MAX_DIRECTIONS };
    // A random preliminary feedback makes `A + B K0` cyclic when `A` is not,
    // so that some single direction is controllable.
    let scale = a.norm().max(1.0) / b.norm();
    let mut pre: Option<Mat> = None;
    for attempt in 0..tries {
        let w = if r == 1 {
            DVector::from_element(1, 1.0)
        } else {
            let v = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
            let nv = v.norm();
            v / nv
        };
        let bw = b * &w;
        let shifted = match &pre {
            Some(k0) => a + b * k0,
            None => a.clone(),
        };
        let Some(f) = place_single(&shifted, &bw, targets) else {
            if r > 1 {
                pre = Some(Mat::from_fn(r, n, |_, _| scale * rng.random_range(-1.0..1.0)));
            }
            continue;
        };
        if !f.iter().all(|v| v.is_finite()) {
            continue;
        }
        let mut gain = &w * f;
        if let Some(k0) = &pre {
            gain += k0;
        }
        let achieved = spectrum(&(a + b * &gain))?;
        let mismatch = match_spectra(&achieved, targets.values())?.max_mismatch;
        let cand = Placement {
            gain,
            mismatch,
            directions_tried: attempt + 1,
        };
        if mismatch <= tol {
            return Ok(cand);
        }
        if best.as_ref().is_none_or(|p| mismatch < p.mismatch) {
            best = Some(cand);
        }
    }
    match best {
        Some(p) => Err(Error::synthesis(
            Stage::Placement,
            format!("placed spectrum mismatch {:.3e} exceeds tolerance {tol:.1e}", p.mismatch),
        )),
        None => Err(Error::synthesis(Stage::Placement, "no input direction gave a controllable single-input reduction")),
    }
}
