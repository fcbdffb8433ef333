//! Dense linear-algebra helpers shared by every stage.
//!
//! All matrices are `nalgebra::DMatrix<f64>`; complex spectra use
//! `num_complex::Complex<f64>` as re-exported by nalgebra.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, ComplexField, DMatrix};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type C64 = Complex<f64>;

/// Default relative tolerance for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub(crate) fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Horizontal concatenation. All blocks must share a row count.
pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation. All blocks must share a column count.
pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Number of singular values above `tol * sigma_max * max(rows, cols)`.
pub fn numerical_rank(m: &Mat, tol: f64) -> Result<usize> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid("rank of an empty matrix"));
    }
    ensure_finite(m, "matrix")?;
    let svd = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let sv = svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    let thresh = tol * smax * m.nrows().max(m.ncols()) as f64;
    Ok(sv.iter().filter(|&&s| s > thresh).count())
}

/// Orthonormal basis of the complement of the orthonormal columns `q`.
pub(crate) fn complement<T: ComplexField>(q: &DMatrix<T>) -> DMatrix<T> {
    let (n, k) = q.shape();
    let mut aug = DMatrix::<T>::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(q);
    for i in 0..n {
        aug[(i, k + i)] = T::one();
    }
    aug.qr().q().columns(k, n - k).into_owned()
}

/// Block sizes of the orthogonal controllability staircase of `(A, B)`.
/// They sum to the dimension of the controllable subspace and their count is
/// the controllability index when that dimension is full. `A` and `B` are
/// scaled to unit norm first; a singular value counts when it exceeds
/// `tol * n`.
pub fn controllability_staircase(a: &Mat, b: &Mat, tol: f64) -> Result<Vec<usize>> {
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    let n = a.nrows();
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return Ok(Vec::new());
    }
    let mut a = if an > 0.0 { a / an } else { a.clone() };
    let mut blk = b / bn;
    let cut = tol * n as f64;
    let mut sizes = Vec::new();
    while a.nrows() > 0 {
        let svd = blk
            .clone()
            .try_svd(true, false, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let u = svd.u.expect("requested U");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > cut)
            .collect();
        if keep.is_empty() {
            break;
        }
        sizes.push(keep.len());
        if keep.len() == a.nrows() {
            break;
        }
        let range = u.select_columns(&keep);
        let rest = complement(&range);
        blk = rest.transpose() * &a * &range;
        a = rest.transpose() * &a * &rest;
    }
    Ok(sizes)
}

/// Eigenvalues sorted by (real, imaginary).
pub fn spectrum(m: &Mat) -> Result<Vec<C64>> {
    if !m.is_square() {
        return Err(Error::dims("spectrum", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    ensure_finite(m, "matrix")?;
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    let mut ev: Vec<C64> = schur.complex_eigenvalues().iter().cloned().collect();
    sort_complex(&mut ev);
    Ok(ev)
}

pub fn sort_complex(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(spectrum(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Result of pairing an achieved spectrum against a target multiset.
#[derive(Debug, Clone)]
pub struct SpectralMatch {
    /// `pairs[k] = (target, achieved)`.
    pub pairs: Vec<(C64, C64)>,
    /// Worst relative mismatch, measured per cluster of repeated targets.
    pub max_mismatch: f64,
    /// Worst relative deviation of any single eigenvalue.
    pub max_pointwise: f64,
}

fn scale_of(z: C64) -> f64 {
    z.norm().max(1.0)
}

/// Pairs two multisets of equal size by greedy nearest-neighbour matching and
/// measures the mismatch relative to `max(|target|, 1)`.
///
/// Repeated target values form a cluster; the cluster is scored by the mean
/// of its matched eigenvalues. The mean of an eigenvalue cluster is well
/// conditioned even when the individual (defective) eigenvalues are not.
pub fn match_spectra(achieved: &[C64], target: &[C64]) -> Result<SpectralMatch> {
    if achieved.len() != target.len() {
        return Err(Error::dims("spectrum matching", target.len(), achieved.len()));
    }
    let n = target.len();
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, t) in target.iter().enumerate() {
        for (j, a) in achieved.iter().enumerate() {
            cand.push(((t - a).norm(), i, j));
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut t_used = vec![false; n];
    let mut a_used = vec![false; n];
    let mut assign = vec![0usize; n];
    for (_, i, j) in cand {
        if !t_used[i] && !a_used[j] {
            t_used[i] = true;
            a_used[j] = true;
            assign[i] = j;
        }
    }
    let pairs: Vec<(C64, C64)> = (0..n).map(|i| (target[i], achieved[assign[i]])).collect();

    let max_pointwise = pairs
        .iter()
        .map(|(t, a)| (t - a).norm() / scale_of(*t))
        .fold(0.0, f64::max);

    let mut visited = vec![false; n];
    let mut max_mismatch: f64 = 0.0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        let t = target[i];
        let tol = 1e-12 * scale_of(t);
        let mut sum = C64::new(0.0, 0.0);
        let mut count = 0.0;
        for k in i..n {
            if !visited[k] && (target[k] - t).norm() <= tol {
                visited[k] = true;
                sum += pairs[k].1;
                count += 1.0;
            }
        }
        let mean = sum / count;
        max_mismatch = max_mismatch.max((mean - t).norm() / scale_of(t));
    }
    Ok(SpectralMatch {
        pairs,
        max_mismatch,
        max_pointwise,
    })
}
