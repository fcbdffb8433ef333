//! Closed-loop assembly and simulation of plant, estimators and channel
//! controller.
//!
//! Stacked state: `x`, then `x_1, ..., x_m`, then (discrete time with delay
//! `D > 0` only) the lag buffers `x_i(t-1), ..., x_i(t-D)` per channel, then
//! the controller state `z`.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Mat, C64};
use crate::model::{check_feedback, MultiChannelSystem};
use crate::synth::ObserverGains;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosedLoopDims {
    pub n: usize,
    pub m: usize,
    pub delay: usize,
    pub order: usize,
}

impl ClosedLoopDims {
    pub fn total(&self) -> usize {
        self.n * (1 + self.m * (1 + self.delay)) + self.order
    }

    pub fn estimate_offset(&self, i: usize) -> usize {
        self.n * (1 + i)
    }

    pub fn lag_offset(&self, i: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.delay);
        self.n * (1 + self.m) + self.n * (i * self.delay + k - 1)
    }

    pub fn z_offset(&self) -> usize {
        self.n * (1 + self.m * (1 + self.delay))
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub matrix: Mat,
    /// Constant additive term on the plant rows.
    pub forcing: DVector<f64>,
    pub dims: ClosedLoopDims,
    /// Output maps `C_i`, kept for the trace.
    pub outputs: Vec<Mat>,
}

/// Implements
///
/// ```text
/// x'   = A x + sum_i B_i F_i x_i + f
/// x_i' = (A + K_i C_i + sum_j B_j F_j) x_i - K_i C_i x + sum_j H_ij (x_i^D - x_j^D) + δ_iq Cb z
/// z'   = Ab z + Kb C_q (x_q - x) + sum_j Hb_j (x_q^D - x_j^D)
/// ```
///
/// where `x_i^D` is `x_i` delayed by `gains.delay` steps.
pub fn assemble_closed_loop(
    sys: &MultiChannelSystem,
    feedback: &[Mat],
    gains: &ObserverGains,
    forcing: Option<&DVector<f64>>,
) -> Result<ClosedLoop> {
    check_feedback(sys, feedback)?;
    let n = sys.n();
    let m = sys.m();
    if gains.k.len() != m || gains.h.len() != m || gains.q >= m {
        return Err(Error::dims("observer gains channel count", m, gains.k.len()));
    }
    for i in 0..m {
        if gains.k[i].shape() != (n, sys.output_dim(i)) {
            return Err(Error::dims(
                format!("K_{}", i + 1),
                format!("{n}x{}", sys.output_dim(i)),
                format!("{}x{}", gains.k[i].nrows(), gains.k[i].ncols()),
            ));
        }
    }
    let order = gains.compensator_order();
    let dims = ClosedLoopDims {
        n,
        m,
        delay: gains.delay,
        order,
    };
    let total = dims.total();
    let mut mat = Mat::zeros(total, total);
    let acl = sys.closed_loop_a(feedback)?;
    let delayed = |i: usize| if dims.delay == 0 { dims.estimate_offset(i) } else { dims.lag_offset(i, dims.delay) };
    let add = |mat: &mut Mat, r: usize, c: usize, blk: &Mat| {
        let mut v = mat.view_mut((r, c), blk.shape());
        v += blk;
    };

    add(&mut mat, 0, 0, sys.a());
    for i in 0..m {
        add(&mut mat, 0, dims.estimate_offset(i), &(sys.b(i) * &feedback[i]));
    }
    for i in 0..m {
        let r = dims.estimate_offset(i);
        let kc = &gains.k[i] * sys.c(i);
        add(&mut mat, r, r, &(&acl + &kc));
        add(&mut mat, r, 0, &(-&kc));
        for (&j, h) in &gains.h[i] {
            add(&mut mat, r, delayed(i), h);
            add(&mut mat, r, delayed(j), &(-h));
        }
        for k in 1..=dims.delay {
            let from = if k == 1 { dims.estimate_offset(i) } else { dims.lag_offset(i, k - 1) };
            add(&mut mat, dims.lag_offset(i, k), from, &Mat::identity(n, n));
        }
    }
    if order > 0 {
        let q = gains.q;
        let zo = dims.z_offset();
        add(&mut mat, dims.estimate_offset(q), zo, &gains.cbar);
        add(&mut mat, zo, zo, &gains.abar);
        let kc = gains.kbar() * sys.c(q);
        add(&mut mat, zo, dims.estimate_offset(q), &kc);
        add(&mut mat, zo, 0, &(-&kc));
        for &j in &gains.partition.neighbors {
            let hb = gains
                .hbar(j)
                .ok_or_else(|| Error::Internal(format!("Hb_{} missing", j + 1)))?;
            add(&mut mat, zo, delayed(q), &hb);
            add(&mut mat, zo, delayed(j), &(-hb));
        }
    }

    let mut f = DVector::zeros(total);
    if let Some(r) = forcing {
        if r.len() != n {
            return Err(Error::dims("forcing", n, r.len()));
        }
        f.rows_mut(0, n).copy_from(r);
    }
    ensure_finite(&mat, "closed-loop matrix")?;
    Ok(ClosedLoop {
        matrix: mat,
        forcing: f,
        dims,
        outputs: sys.outputs().to_vec(),
    })
}

pub fn spectrum(m: &Mat) -> Result<Vec<C64>> {
    crate::linalg::spectrum(m)
}

/// Initial condition of the stacked state.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub x: DVector<f64>,
    pub estimates: Option<Vec<DVector<f64>>>,
    pub z: Option<DVector<f64>>,
}

impl InitialState {
    /// Plant at `x`, every estimate, lag and controller state at zero.
    pub fn plant(x: DVector<f64>) -> Self {
        Self {
            x,
            estimates: None,
            z: None,
        }
    }

    fn stack(&self, dims: &ClosedLoopDims) -> Result<DVector<f64>> {
        let n = dims.n;
        if self.x.len() != n {
            return Err(Error::dims("x0", n, self.x.len()));
        }
        let mut s = DVector::zeros(dims.total());
        s.rows_mut(0, n).copy_from(&self.x);
        if let Some(est) = &self.estimates {
            if est.len() != dims.m {
                return Err(Error::dims("initial estimates", dims.m, est.len()));
            }
            for (i, e) in est.iter().enumerate() {
                if e.len() != n {
                    return Err(Error::dims(format!("x_{}(0)", i + 1), n, e.len()));
                }
                s.rows_mut(dims.estimate_offset(i), n).copy_from(e);
                for k in 1..=dims.delay {
                    s.rows_mut(dims.lag_offset(i, k), n).copy_from(e);
                }
            }
        }
        if let Some(z) = &self.z {
            if z.len() != dims.order {
                return Err(Error::dims("z(0)", dims.order, z.len()));
            }
            s.rows_mut(dims.z_offset(), dims.order).copy_from(z);
        }
        Ok(s)
    }
}

/// Sampled trajectories. Errors are recomputed from the stored states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub estimates: Vec<Vec<DVector<f64>>>,
    pub z: Vec<DVector<f64>>,
    pub outputs: Vec<Vec<DVector<f64>>>,
}

impl SimTrace {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            x: Vec::new(),
            estimates: Vec::new(),
            z: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, s: &DVector<f64>, cl: &ClosedLoop) {
        let d = &cl.dims;
        let x = s.rows(0, d.n).into_owned();
        self.times.push(t);
        self.estimates
            .push((0..d.m).map(|i| s.rows(d.estimate_offset(i), d.n).into_owned()).collect());
        self.outputs.push(cl.outputs.iter().map(|c| c * &x).collect());
        self.z.push(s.rows(d.z_offset(), d.order).into_owned());
        self.x.push(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `e_i = x_i - x` at sample `k`.
    pub fn error(&self, k: usize, i: usize) -> DVector<f64> {
        &self.estimates[k][i] - &self.x[k]
    }

    /// Euclidean norm of the stacked error at sample `k`.
    pub fn error_norm(&self, k: usize) -> f64 {
        (0..self.estimates[k].len())
            .map(|i| self.error(k, i).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn final_error_norm(&self) -> f64 {
        self.error_norm(self.len() - 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.is_empty() {
            return out;
        }
        let n = self.x[0].len();
        let m = self.estimates[0].len();
        let nz = self.z[0].len();
        let mut head = vec!["time".to_string()];
        head.extend((1..=n).map(|k| format!("x[{k}]")));
        for i in 1..=m {
            head.extend((1..=n).map(|k| format!("xhat{i}[{k}]")));
        }
        head.extend((1..=nz).map(|k| format!("z[{k}]")));
        for i in 1..=m {
            head.extend((1..=n).map(|k| format!("e{i}[{k}]")));
        }
        for (i, y) in self.outputs[0].iter().enumerate() {
            head.extend((1..=y.len()).map(|k| format!("y{}[{k}]", i + 1)));
        }
        out.push_str(&head.join(","));
        out.push('\n');
        for k in 0..self.len() {
            let mut row = vec![self.times[k]];
            row.extend(self.x[k].iter());
            for e in &self.estimates[k] {
                row.extend(e.iter());
            }
            row.extend(self.z[k].iter());
            for i in 0..m {
                row.extend(self.error(k, i).iter());
            }
            for y in &self.outputs[k] {
                row.extend(y.iter());
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Largest step keeping `h max|λ| <= 0.1`.
pub fn max_step(cl: &ClosedLoop) -> Result<f64> {
    let rho = crate::linalg::spectral_radius(&cl.matrix)?;
    Ok(if rho == 0.0 { f64::INFINITY } else { 0.1 / rho })
}

pub fn default_step(cl: &ClosedLoop) -> Result<f64> {
    let rho = crate::linalg::spectral_radius(&cl.matrix)?;
    Ok(if rho == 0.0 { 0.05 } else { 0.05 / rho })
}

/// Classical RK4 on `s' = M s + f` with fixed step `h` (last step shortened to
/// land on `t_final`).
pub fn simulate_continuous(cl: &ClosedLoop, init: &InitialState, t_final: f64, h: Option<f64>) -> Result<SimTrace> {
    if cl.dims.delay != 0 {
        return Err(Error::invalid("delayed gains describe a discrete-time loop; use simulate_discrete"));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::invalid(format!("final time {t_final} must be finite and nonnegative")));
    }
    let limit = max_step(cl)?;
    let h = match h {
        Some(h) => h,
        None => default_step(cl)?,
    };
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step {h} must be positive")));
    }
    if h > limit * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "step {h:.3e} violates h * max|λ| <= 0.1; use h <= {limit:.3e}"
        )));
    }
    let mut s = init.stack(&cl.dims)?;
    let m = &cl.matrix;
    let f = &cl.forcing;
    let rhs = |s: &DVector<f64>| m * s + f;
    let mut trace = SimTrace::new();
    trace.record(0.0, &s, cl);
    let steps = (t_final / h).ceil() as usize;
    let mut t = 0.0;
    for k in 0..steps {
        let dt = if k + 1 == steps { t_final - t } else { h };
        if dt <= 0.0 {
            break;
        }
        let k1 = rhs(&s);
        let k2 = rhs(&(&s + &k1 * (dt / 2.0)));
        let k3 = rhs(&(&s + &k2 * (dt / 2.0)));
        let k4 = rhs(&(&s + &k3 * dt));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        t = if k + 1 == steps { t_final } else { (k + 1) as f64 * h };
        trace.record(t, &s, cl);
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("simulation diverged to non-finite values".into()));
    }
    Ok(trace)
}

/// Exact iteration `s(t+1) = M s(t) + f`.
pub fn simulate_discrete(cl: &ClosedLoop, init: &InitialState, steps: usize) -> Result<SimTrace> {
    let mut s = init.stack(&cl.dims)?;
    let mut trace = SimTrace::new();
    trace.record(0.0, &s, cl);
    for k in 1..=steps {
        s = &cl.matrix * &s + &cl.forcing;
        trace.record(k as f64, &s, cl);
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("simulation diverged to non-finite values".into()));
    }
    Ok(trace)
}

/// Least-squares slope of `ln ‖e(t)‖` against `t` over the samples after the
/// peak whose norm stays above `floor`. Returns `None` with fewer than three
/// usable samples.
pub fn decay_slope(trace: &SimTrace, floor: f64) -> Option<f64> {
    let norms: Vec<f64> = (0..trace.len()).map(|k| trace.error_norm(k)).collect();
    log_slope(&trace.times, &norms, floor)
}

/// [`decay_slope`] for a bare sequence of norms sampled at `times`.
pub fn log_slope(times: &[f64], norms: &[f64], floor: f64) -> Option<f64> {
    let peak = norms
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > norms[best] { k } else { best });
    let pts: Vec<(f64, f64)> = (peak..norms.len().min(times.len()))
        .take_while(|&k| norms[k] > floor)
        .map(|k| (times[k], norms[k].ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let nf = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(num / den)
}
