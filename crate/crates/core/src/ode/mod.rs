//! Piecewise-linear hydrodynamic equations.
//!
//! While the minimal size is `l`, the density `x` solves the linear system
//! `dx/dt = b^(l)(x)` with
//! `b_l = -2 K(l,l) x_l - sum_{j>l} K(l,j) x_j` and
//! `b_j = K(j-l,l) x_{j-l} - K(l,j) x_j` for `j > l`.
//! When `x_l` reaches zero the minimal size moves to `l + 1`.

mod dopri;
mod report;

pub use report::{
    lyapunov_report, moment_derivative_check, write_dense_csv, write_sparse_dense_csv,
    write_switch_csv, DerivativeCheck, LyapunovReport, LyapunovSegment,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Kernel, Size};
use crate::stats::CompensatedSum;

use dopri::{interpolate, Workspace};

/// Tolerances and limits of the solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverControls {
    pub atol: f64,
    pub rtol: f64,
    /// Accuracy of `x_l` at a located vanishing time.
    pub tol_event: f64,
    /// Largest negative excursion that is silently clamped to zero.
    pub tol_neg: f64,
    pub tol_mass: f64,
    pub tol_overflow: f64,
    /// Truncation cap `M`: sizes `1..=M` are resolved.
    pub cap: usize,
    /// Longest time a single segment may take before giving up.
    pub max_segment_time: f64,
    pub max_steps: usize,
    /// Keep the continuous extension of every step. Without it only the
    /// switch states and the final state are stored.
    pub dense_output: bool,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            tol_event: 1e-10,
            tol_neg: 1e-12,
            tol_mass: 1e-8,
            tol_overflow: 1e-6,
            cap: 1024,
            max_segment_time: 1e6,
            max_steps: 1_000_000,
            dense_output: true,
        }
    }
}

/// Truncated density together with its minimal size. `x[j-1]` is `x_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseState {
    pub x: Vec<f64>,
    pub ell: Size,
    /// First moment carried past the cap.
    pub overflow_mass: f64,
    pub t: f64,
}

impl DenseState {
    /// Embeds `x0` (index 0 is size 1) into a state with cap `cap` at time 0.
    pub fn from_initial(x0: &[f64], cap: usize) -> Result<Self> {
        let support = x0.iter().rposition(|&v| v != 0.0).map_or(0, |k| k + 1);
        if support > cap {
            return Err(Error::InvalidParameter(format!(
                "initial support reaches size {support}, beyond the cap {cap}"
            )));
        }
        if let Some(k) = x0.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::BadEntry { size: k as Size + 1 });
        }
        let ell = x0.iter().position(|&v| v > 0.0).ok_or(Error::ZeroMass)? as Size + 1;
        let mut x = vec![0.0; cap];
        x[..support].copy_from_slice(&x0[..support]);
        Ok(Self {
            x,
            ell,
            overflow_mass: 0.0,
            t: 0.0,
        })
    }

    pub fn cap(&self) -> usize {
        self.x.len()
    }

    /// `x_j`, zero past the cap.
    pub fn get(&self, j: Size) -> f64 {
        j.checked_sub(1)
            .and_then(|k| self.x.get(k as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// `sum_j j x_j` over the resolved sizes.
    pub fn first_moment(&self) -> f64 {
        moment(self, |j| j as f64)
    }

    /// First moment including the overflow.
    pub fn total_mass(&self) -> f64 {
        self.first_moment() + self.overflow_mass
    }

    fn check_prefix(&self) -> Result<()> {
        check_prefix(self.ell, &self.x)
    }
}

/// `sum_j g(j) x_j` over the resolved sizes.
pub fn moment(state: &DenseState, g: impl Fn(Size) -> f64) -> f64 {
    state
        .x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(k, &v)| g(k as Size + 1) * v)
        .collect::<CompensatedSum>()
        .value()
}

fn check_prefix(ell: Size, x: &[f64]) -> Result<()> {
    if ell == 0 {
        return Err(Error::ZeroSize);
    }
    let lim = (ell as usize - 1).min(x.len());
    if let Some(k) = x[..lim].iter().position(|&v| v != 0.0) {
        return Err(Error::PrefixViolation {
            size: k as Size + 1,
            min_size: ell,
        });
    }
    Ok(())
}

/// A vector field on the truncated sizes plus the first-moment rate of the
/// gain terms that land past the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValue {
    pub field: Vec<f64>,
    pub overflow_rate: f64,
}

/// Evaluates the field with rates `a[j-1] = a_j` into `out[..M]` and the
/// overflow rate into `out[M]`, where `M = a.len()`. Terms `K(j-l, l)` use
/// the symmetry `a_{j-l} = K(l, j-l)`.
fn eval_field(ell: Size, a: &[f64], y: &[f64], out: &mut [f64]) {
    let m = a.len();
    let l = ell as usize;
    out.fill(0.0);
    if l > m {
        return;
    }
    let hi = (l..=m).rev().find(|&j| y[j - 1] != 0.0).unwrap_or(l);
    let mut loss = 0.0;
    let mut overflow = 0.0;
    for j in l..=hi {
        let r = a[j - 1] * y[j - 1];
        if r == 0.0 {
            continue;
        }
        if j > l {
            out[j - 1] -= r;
            loss += r;
        }
        let target = j + l;
        if target <= m {
            out[target - 1] += r;
        } else {
            overflow += r * target as f64;
        }
    }
    out[l - 1] -= 2.0 * a[l - 1] * y[l - 1] + loss;
    out[m] = overflow;
}

fn field_value(ell: Size, a: &[f64], x: &[f64]) -> FieldValue {
    let mut y = x.to_vec();
    y.push(0.0);
    let mut out = vec![0.0; x.len() + 1];
    eval_field(ell, a, &y, &mut out);
    let overflow_rate = out.pop().unwrap_or(0.0);
    FieldValue {
        field: out,
        overflow_rate,
    }
}

fn rate_row(ell: Size, k: &Kernel, cap: usize) -> Vec<f64> {
    (1..=cap as Size).map(|j| k.eval(ell, j)).collect()
}

/// `b^(i)(x)` on the sizes `1..=x.len()`.
pub fn vector_field_b(i: Size, x: &[f64], k: &Kernel) -> Result<FieldValue> {
    check_prefix(i, x)?;
    Ok(field_value(i, &rate_row(i, k, x.len()), x))
}

/// The same linear field with arbitrary rates `a[j-1] = a_j`:
/// `F_i = -a_i y_i - sum_{j>=i} a_j y_j`, `F_j = a_{j-i} y_{j-i} - a_j y_j`.
pub fn vector_field_f(i: Size, a: &[f64], y: &[f64]) -> Result<FieldValue> {
    check_prefix(i, y)?;
    if a.len() < y.len() {
        return Err(Error::InvalidParameter("rate sequence shorter than the state".into()));
    }
    Ok(field_value(i, &a[..y.len()], y))
}

/// One accepted step with the coefficients of its continuous extension.
/// Coefficient vectors are cut after the last nonzero size.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    coeffs: [Vec<f64>; 5],
    overflow: [f64; 5],
}

impl DenseStep {
    fn new(t0: f64, h: f64, mut r: [Vec<f64>; 5]) -> Self {
        let m = r[0].len() - 1;
        let overflow = std::array::from_fn(|k| r[k][m]);
        let len = (0..m)
            .rev()
            .find(|&j| r.iter().any(|v| v[j] != 0.0))
            .map_or(0, |j| j + 1);
        for v in r.iter_mut() {
            v.truncate(len);
            v.shrink_to_fit();
        }
        Self {
            t0,
            h,
            coeffs: r,
            overflow,
        }
    }

    fn theta(&self, t: f64) -> f64 {
        ((t - self.t0) / self.h).clamp(0.0, 1.0)
    }

    /// `x_j` at time `t` within the step.
    pub fn value(&self, j: Size, t: f64) -> f64 {
        let k = j as usize - 1;
        if k >= self.coeffs[0].len() {
            return 0.0;
        }
        let c = std::array::from_fn(|r| self.coeffs[r][k]);
        interpolate(c, self.theta(t))
    }

    fn fill(&self, t: f64, x: &mut [f64]) -> f64 {
        let th = self.theta(t);
        x.fill(0.0);
        for k in 0..self.coeffs[0].len().min(x.len()) {
            let c = std::array::from_fn(|r| self.coeffs[r][k]);
            x[k] = interpolate(c, th);
        }
        interpolate(self.overflow, th)
    }
}

/// Dense record of one constant-minimal-size stretch.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub ell: Size,
    pub t_start: f64,
    pub t_end: f64,
    pub steps: Vec<DenseStep>,
    /// Largest `||dx/dt||_1` seen at step ends.
    pub max_field_norm: f64,
    /// True when the segment ended because `x_l` vanished.
    pub switched: bool,
    pub clamps: usize,
    pub rejected_steps: usize,
}

/// Result of [`integrate_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    /// State at the end; `x_l = 0` exactly when the segment switched.
    pub state: DenseState,
    pub duration: f64,
    pub segment: Segment,
    /// `dx_l/dt` at the located root.
    pub slope_at_root: Option<f64>,
}

fn clamp_negatives(x: &mut [f64], tol_neg: f64, t: f64) -> Result<usize> {
    let mut n = 0;
    for (k, v) in x.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -tol_neg {
                return Err(Error::NegativeComponent {
                    size: k as Size + 1,
                    value: *v,
                    t,
                });
            }
            *v = 0.0;
            n += 1;
        }
    }
    Ok(n)
}

/// Root of the continuous extension of component `l` inside a step where it
/// changes sign from positive to non-positive. Alternates secant and
/// bisection so the bracket at least halves every two iterations.
fn locate_root(step: &DenseStep, l: Size, f0: f64, f1: f64) -> f64 {
    let t_of = |th: f64| step.t0 + th * step.h;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut flo, mut fhi) = (f0, f1);
    if fhi == 0.0 {
        return 1.0;
    }
    for it in 0..200 {
        let mut th = if it % 2 == 0 {
            lo - flo * (hi - lo) / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        if !(th > lo && th < hi) {
            th = 0.5 * (lo + hi);
        }
        let f = step.value(l, t_of(th));
        if f == 0.0 {
            return th;
        }
        if f > 0.0 {
            lo = th;
            flo = f;
        } else {
            hi = th;
            fhi = f;
        }
        if (hi - lo) * step.h <= 4.0 * f64::EPSILON * t_of(hi).abs().max(1.0) {
            break;
        }
    }
    if flo.abs() < fhi.abs() {
        lo
    } else {
        hi
    }
}

/// Integrates `dx/dt = b^(l)(x)` from `state` until `x_l` vanishes or the
/// time reaches `t_stop`.
pub fn integrate_segment(
    state: &DenseState,
    k: &Kernel,
    controls: &SolverControls,
    t_stop: Option<f64>,
) -> Result<SegmentOutcome> {
    state.check_prefix()?;
    let ell = state.ell;
    let l = ell as usize;
    let m = state.cap();
    if l > m {
        return Err(Error::CapTooSmall { cap: m, target: ell });
    }
    if !(state.x[l - 1] > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "segment needs x_{ell} > 0, found {}",
            state.x[l - 1]
        )));
    }
    let a = rate_row(ell, k, m);
    let mut f = |y: &[f64], out: &mut [f64]| eval_field(ell, &a, y, out);

    let mut y = state.x.clone();
    y.push(state.overflow_mass);
    let mut ws = Workspace::new(m + 1);
    f(&y, ws.k1_mut());

    let t_begin = state.t;
    let mut t = t_begin;
    let mut seg = Segment {
        ell,
        t_start: t_begin,
        t_end: t_begin,
        steps: Vec::new(),
        max_field_norm: l1(&ws.k1()[..m]),
        switched: false,
        clamps: 0,
        rejected_steps: 0,
    };

    let mut h = initial_step(&y, ws.k1(), controls);
    let mut attempts = 0usize;
    loop {
        if let Some(ts) = t_stop {
            if t >= ts {
                break;
            }
            h = h.min(ts - t);
        }
        if t - t_begin > controls.max_segment_time || attempts > controls.max_steps {
            return Err(Error::NoCrossing { ell, t });
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
        attempts += 1;
        ws.attempt(&y, h, &mut f);
        let err = ws.error_norm(&y, controls.atol, controls.rtol);
        if !(err <= 1.0) {
            seg.rejected_steps += 1;
            let fac = if err.is_finite() { 0.9 * err.powf(-0.2) } else { 0.2 };
            h *= fac.clamp(0.2, 1.0);
            continue;
        }
        let worst = ws.y_new[..m]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != l - 1)
            .map(|(_, &v)| v)
            .fold(0.0, f64::min);
        if worst < -controls.tol_neg {
            seg.rejected_steps += 1;
            h *= 0.5;
            continue;
        }

        let x_l_new = ws.y_new[l - 1];
        let step = DenseStep::new(t, h, ws.dense(&y, h));
        if x_l_new <= 0.0 {
            let theta = locate_root(&step, ell, y[l - 1], x_l_new);
            let t_root = t + theta * h;
            let mut x = vec![0.0; m];
            let overflow = step.fill(t_root, &mut x);
            let residual = x[l - 1];
            if residual.abs() > controls.tol_event {
                return Err(Error::NoCrossing { ell, t: t_root });
            }
            let mut yr = x.clone();
            yr.push(overflow);
            let mut d = vec![0.0; m + 1];
            f(&yr, &mut d);
            x[l - 1] = 0.0;
            seg.clamps += clamp_negatives(&mut x, controls.tol_neg, t_root)?;
            if controls.dense_output {
                seg.steps.push(step);
            }
            seg.t_end = t_root;
            seg.switched = true;
            return Ok(SegmentOutcome {
                state: DenseState {
                    x,
                    ell,
                    overflow_mass: overflow,
                    t: t_root,
                },
                duration: t_root - t_begin,
                segment: seg,
                slope_at_root: Some(d[l - 1]),
            });
        }

        if controls.dense_output {
            seg.steps.push(step);
        }
        t = match t_stop {
            Some(ts) if ts - t <= h => ts,
            _ => t + h,
        };
        std::mem::swap(&mut y, &mut ws.y_new);
        ws.fsal();
        let clamped = clamp_negatives(&mut y[..m], controls.tol_neg, t)?;
        if clamped > 0 {
            seg.clamps += clamped;
            f(&y, ws.k1_mut());
        }
        seg.max_field_norm = seg.max_field_norm.max(l1(&ws.k1()[..m]));
        let fac = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 10.0 };
        h *= fac.clamp(0.2, 10.0);
    }

    seg.t_end = t;
    let overflow = y.pop().unwrap_or(0.0);
    Ok(SegmentOutcome {
        state: DenseState {
            x: y,
            ell,
            overflow_mass: overflow,
            t,
        },
        duration: t - t_begin,
        segment: seg,
        slope_at_root: None,
    })
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn initial_step(y: &[f64], f: &[f64], c: &SolverControls) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for (yi, fi) in y.iter().zip(f) {
        let sk = c.atol + c.rtol * yi.abs();
        d0 = d0.max(yi.abs() / sk);
        d1 = d1.max(fi.abs() / sk);
    }
    if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
}

/// When [`integrate_piecewise`] stops: after the minimal size exceeds
/// `max_min_size` or at `max_time`, whichever comes first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PiecewiseStop {
    pub max_min_size: Option<Size>,
    pub max_time: Option<f64>,
}

impl PiecewiseStop {
    pub fn min_size(i: Size) -> Self {
        Self {
            max_min_size: Some(i),
            max_time: None,
        }
    }

    pub fn time(t: f64) -> Self {
        Self {
            max_min_size: None,
            max_time: Some(t),
        }
    }
}

/// The chained solution with its vanishing times.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSolution {
    pub initial: DenseState,
    pub initial_mass: f64,
    /// `t_i` for `i = 1, 2, ...`: entry `i - 1` is the time size `i` vanished.
    pub switch_times: Vec<f64>,
    /// State right after each switch (`x_i = 0`).
    pub switch_states: Vec<DenseState>,
    /// `s_i = t_i - t_{i-1}`.
    pub durations: Vec<f64>,
    /// Sizes that were already below the event tolerance when reached.
    pub skipped: Vec<Size>,
    /// `dx_i/dt` at each located vanishing time (NaN when skipped).
    pub slopes_at_switch: Vec<f64>,
    pub segments: Vec<Segment>,
    pub final_state: DenseState,
    pub clamps: usize,
    pub max_mass_drift: f64,
}

impl PiecewiseSolution {
    /// Time up to which the solution is known.
    pub fn coverage(&self) -> f64 {
        self.final_state.t
    }

    /// `t_i`, when computed.
    pub fn t(&self, i: Size) -> Option<f64> {
        i.checked_sub(1)
            .and_then(|k| self.switch_times.get(k as usize))
            .copied()
    }

    /// Partial sum `sum s_i` of the computed segment durations.
    pub fn t_inf_partial(&self) -> f64 {
        self.durations.iter().copied().collect::<CompensatedSum>().value()
    }

    /// Aitken extrapolation of the partial sums `t_i`. A heuristic, not a
    /// bound: `None` unless the last three durations decrease.
    pub fn t_inf_extrapolation(&self) -> Option<f64> {
        let n = self.switch_times.len();
        if n < 3 {
            return None;
        }
        let (t0, t1, t2) = (self.switch_times[n - 3], self.switch_times[n - 2], self.switch_times[n - 1]);
        let (d1, d2) = (t1 - t0, t2 - t1);
        if !(d2 < d1) || d2 <= 0.0 {
            return None;
        }
        Some(t2 - d2 * d2 / (d2 - d1))
    }

    fn segment_index(&self, t: f64) -> Option<usize> {
        let idx = self.segments.partition_point(|s| s.t_start <= t);
        idx.checked_sub(1)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let cov = self.coverage();
        if t < 0.0 || t > cov * (1.0 + 4.0 * f64::EPSILON) {
            return Err(Error::HorizonExceedsSolution {
                horizon: t,
                coverage: cov,
            });
        }
        Ok(())
    }

    /// Minimal size in force at time `t`.
    pub fn ell_at(&self, t: f64) -> Size {
        if t >= self.coverage() {
            return self.final_state.ell;
        }
        self.segment_index(t)
            .map_or(self.initial.ell, |k| self.segments[k].ell)
    }

    fn step_at(&self, t: f64) -> Option<&DenseStep> {
        let seg = &self.segments[self.segment_index(t)?];
        if t >= seg.t_end && seg.switched {
            return None;
        }
        let k = seg.steps.partition_point(|s| s.t0 <= t).checked_sub(1)?;
        seg.steps.get(k)
    }

    /// Interpolated state at time `t`.
    pub fn state_at(&self, t: f64) -> Result<DenseState> {
        self.check_time(t)?;
        if t >= self.coverage() {
            return Ok(self.final_state.clone());
        }
        let Some(step) = self.step_at(t) else {
            // zero-length gaps between segments only occur at switch times
            let k = self.switch_times.partition_point(|&s| s <= t);
            return Ok(self.switch_states[k.saturating_sub(1)].clone());
        };
        let mut x = vec![0.0; self.initial.cap()];
        let overflow = step.fill(t, &mut x);
        let ell = self.ell_at(t);
        x[..ell as usize - 1].fill(0.0);
        Ok(DenseState {
            x,
            ell,
            overflow_mass: overflow,
            t,
        })
    }

    /// Interpolated `x_j(t)`.
    pub fn value_at(&self, t: f64, j: Size) -> Result<f64> {
        self.check_time(t)?;
        if t >= self.coverage() {
            return Ok(self.final_state.get(j));
        }
        if j < self.ell_at(t) {
            return Ok(0.0);
        }
        Ok(match self.step_at(t) {
            Some(step) => step.value(j, t),
            None => {
                let k = self.switch_times.partition_point(|&s| s <= t);
                self.switch_states[k.saturating_sub(1)].get(j)
            }
        })
    }

    /// Interpolated `x(t)` written to `out` with trailing zeros dropped.
    pub fn fill_at(&self, t: f64, out: &mut Vec<f64>) -> Result<()> {
        self.check_time(t)?;
        out.clear();
        let step = if t >= self.coverage() { None } else { self.step_at(t) };
        match step {
            Some(step) => {
                out.resize(step.coeffs[0].len(), 0.0);
                step.fill(t, out);
                let ell = self.ell_at(t) as usize;
                let lim = (ell - 1).min(out.len());
                out[..lim].fill(0.0);
            }
            None => {
                let s = if t >= self.coverage() {
                    &self.final_state
                } else {
                    let k = self.switch_times.partition_point(|&s| s <= t);
                    &self.switch_states[k.saturating_sub(1)]
                };
                let len = s.x.iter().rposition(|&v| v != 0.0).map_or(0, |k| k + 1);
                out.extend_from_slice(&s.x[..len]);
            }
        }
        Ok(())
    }

    /// Start times of all accepted steps plus every segment end.
    pub fn sample_times(&self) -> Vec<f64> {
        let mut ts = Vec::new();
        for seg in &self.segments {
            ts.extend(seg.steps.iter().map(|s| s.t0));
            ts.push(seg.t_end);
        }
        ts.dedup();
        ts
    }

    /// True when `x_j(t_i) > tol` for `j = i + 1` and `x_j(t_i) >= 0` for all
    /// larger `j`, at every located switch.
    pub fn positivity_holds(&self, tol: f64) -> bool {
        self.switch_states.iter().enumerate().all(|(k, s)| {
            let i = k + 1;
            if self.skipped.contains(&(i as Size)) {
                return true;
            }
            s.x.get(i).is_none_or(|&v| v > tol) && s.x[i..].iter().all(|&v| v >= 0.0)
        })
    }
}

/// Solves from normalised `x0` by chaining segments. Sizes already below
/// `tol_event` when they become minimal are switched at once with `s_i = 0`.
pub fn integrate_piecewise(
    x0: &[f64],
    k: &Kernel,
    stop: PiecewiseStop,
    controls: &SolverControls,
) -> Result<PiecewiseSolution> {
    if stop.max_min_size.is_none() && stop.max_time.is_none() {
        return Err(Error::InvalidParameter("need a minimal-size or time limit".into()));
    }
    if let Some(i) = stop.max_min_size {
        if (controls.cap as u64) < 2 * i {
            return Err(Error::CapTooSmall {
                cap: controls.cap,
                target: i,
            });
        }
    }
    if x0.first().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::MissingSizeOne);
    }
    let initial = DenseState::from_initial(x0, controls.cap)?;
    let initial_mass = initial.total_mass();
    let mut sol = PiecewiseSolution {
        initial: initial.clone(),
        initial_mass,
        switch_times: Vec::new(),
        switch_states: Vec::new(),
        durations: Vec::new(),
        skipped: Vec::new(),
        slopes_at_switch: Vec::new(),
        segments: Vec::new(),
        final_state: initial.clone(),
        clamps: 0,
        max_mass_drift: 0.0,
    };
    let mut state = initial;
    let done = |s: &DenseState| {
        stop.max_min_size.is_some_and(|i| s.ell > i) || stop.max_time.is_some_and(|t| s.t >= t)
    };
    while !done(&state) {
        let out = integrate_segment(&state, k, controls, stop.max_time)?;
        sol.clamps += out.segment.clamps;
        let switched = out.segment.switched;
        sol.segments.push(out.segment);
        state = out.state;
        check_conservation(&state, initial_mass, controls, &mut sol.max_mass_drift)?;
        if !switched {
            break;
        }
        let t_prev = sol.switch_times.last().copied().unwrap_or(0.0);
        sol.switch_times.push(state.t);
        sol.durations.push(state.t - t_prev);
        sol.slopes_at_switch.push(out.slope_at_root.unwrap_or(f64::NAN));
        sol.switch_states.push(state.clone());
        state.ell += 1;
        while !done(&state) {
            let l = state.ell as usize;
            if l > state.cap() {
                return Err(Error::CapTooSmall {
                    cap: state.cap(),
                    target: state.ell,
                });
            }
            if state.x[l - 1] > controls.tol_event {
                break;
            }
            state.x[l - 1] = 0.0;
            sol.switch_times.push(state.t);
            sol.durations.push(0.0);
            sol.slopes_at_switch.push(f64::NAN);
            sol.skipped.push(state.ell);
            sol.switch_states.push(state.clone());
            state.ell += 1;
        }
    }
    sol.final_state = state;
    Ok(sol)
}

fn check_conservation(
    state: &DenseState,
    initial_mass: f64,
    c: &SolverControls,
    max_drift: &mut f64,
) -> Result<()> {
    if state.overflow_mass > c.tol_overflow {
        return Err(Error::TruncationOverflow {
            overflow: state.overflow_mass,
            budget: c.tol_overflow,
        });
    }
    let drift = (state.total_mass() - initial_mass).abs();
    *max_drift = max_drift.max(drift);
    if drift > c.tol_mass {
        return Err(Error::MassDrift {
            drift,
            tol: c.tol_mass,
        });
    }
    Ok(())
}
