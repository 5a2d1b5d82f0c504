//! Diagnostics and exports for a piecewise solution.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Kernel, Size};

use super::{moment, PiecewiseSolution};

/// Central difference of a moment against the moment identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub t: f64,
    pub h: f64,
    pub finite_difference: f64,
    pub identity: f64,
    pub rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Constant in the `C h^2` part of the tolerance.
const FD_CONSTANT: f64 = 10.0;

/// Compares `(M_g(t+h) - M_g(t-h)) / 2h` with
/// `sum_{j>=l} (g(l+j) - g(l) - g(j)) K(l,j) x_j(t)`.
pub fn moment_derivative_check(
    sol: &PiecewiseSolution,
    k: &Kernel,
    g: impl Fn(Size) -> f64,
    t: f64,
    h: f64,
) -> Result<DerivativeCheck> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("h must be positive".into()));
    }
    if sol.switch_times.iter().any(|&s| (s - t).abs() <= h) || t - h < 0.0 {
        return Err(Error::TooCloseToSwitch { h });
    }
    let lo = sol.state_at(t - h)?;
    let hi = sol.state_at(t + h)?;
    let mid = sol.state_at(t)?;
    let fd = (moment(&hi, &g) - moment(&lo, &g)) / (2.0 * h);

    let l = mid.ell;
    let (mut rhs, mut scale) = (0.0, 0.0);
    for (idx, &x) in mid.x.iter().enumerate().skip(l as usize - 1) {
        if x == 0.0 {
            continue;
        }
        let j = idx as Size + 1;
        let r = k.eval(l, j) * x;
        rhs += (g(l + j) - g(l) - g(j)) * r;
        scale += (g(l + j).abs() + g(l).abs() + g(j).abs()) * r;
    }
    let rel_error = (fd - rhs).abs() / rhs.abs().max(scale * 1e-6).max(f64::MIN_POSITIVE);
    let tol = (FD_CONSTANT * h * h).max(1e-6);
    Ok(DerivativeCheck {
        t,
        h,
        finite_difference: fd,
        identity: rhs,
        rel_error,
        tol,
        passed: rel_error <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSegment {
    pub ell: Size,
    /// `-delta_l / (2 l)`.
    pub bound: f64,
    pub max_slope: f64,
    /// `(t, d/dt (M_{-1} / M_0))` on the sampling grid.
    pub slopes: Vec<(f64, f64)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub tol_slope: f64,
    pub segments: Vec<LyapunovSegment>,
}

impl LyapunovReport {
    pub fn passed(&self) -> bool {
        self.segments.iter().all(|s| s.passed)
    }
}

/// Differentiates `M_{-1} / M_0` numerically on `samples` equally spaced
/// points per segment and compares with `-delta_l / (2 l)`.
pub fn lyapunov_report(
    sol: &PiecewiseSolution,
    k: &Kernel,
    samples: usize,
    tol_slope: f64,
) -> Result<LyapunovReport> {
    if samples < 3 {
        return Err(Error::InvalidParameter("need at least 3 samples per segment".into()));
    }
    let mut segments = Vec::with_capacity(sol.segments.len());
    for seg in &sol.segments {
        let delta = k.delta_i(seg.ell).ok_or(Error::MissingDelta)?;
        let bound = -delta / (2.0 * seg.ell as f64);
        let dt = (seg.t_end - seg.t_start) / (samples - 1) as f64;
        if !(dt > 0.0) {
            continue;
        }
        let ts: Vec<f64> = (0..samples).map(|n| seg.t_start + n as f64 * dt).collect();
        let ratio = ts
            .iter()
            .map(|&t| {
                let s = sol.state_at(t)?;
                Ok(moment(&s, |j| 1.0 / j as f64) / moment(&s, |_| 1.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = samples - 1;
        let slopes: Vec<(f64, f64)> = (0..samples)
            .map(|i| {
                let d = if i == 0 {
                    (-3.0 * ratio[0] + 4.0 * ratio[1] - ratio[2]) / (2.0 * dt)
                } else if i == n {
                    (3.0 * ratio[n] - 4.0 * ratio[n - 1] + ratio[n - 2]) / (2.0 * dt)
                } else {
                    (ratio[i + 1] - ratio[i - 1]) / (2.0 * dt)
                };
                (ts[i], d)
            })
            .collect();
        let max_slope = slopes.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        segments.push(LyapunovSegment {
            ell: seg.ell,
            bound,
            max_slope,
            passed: max_slope <= bound + tol_slope,
            slopes,
        });
    }
    Ok(LyapunovReport {
        tol_slope,
        segments,
    })
}

/// CSV `t, ell, x_1, ..., x_M` at every step boundary.
pub fn write_dense_csv<W: Write>(w: W, sol: &PiecewiseSolution) -> Result<()> {
    let m = sol.initial.cap();
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "ell".to_string()];
    header.extend((1..=m).map(|j| format!("x_{j}")));
    wr.write_record(&header)?;
    for t in sol.sample_times() {
        let s = sol.state_at(t)?;
        let mut row = vec![t.to_string(), s.ell.to_string()];
        row.extend(s.x.iter().map(|v| v.to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV `t, ell, x` where `x` is a JSON object of the nonzero entries.
pub fn write_sparse_dense_csv<W: Write>(w: W, sol: &PiecewiseSolution) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "ell", "x"])?;
    for t in sol.sample_times() {
        let s = sol.state_at(t)?;
        let entries: Vec<String> = s
            .x
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, v)| format!("\"{}\":{v}", k + 1))
            .collect();
        wr.write_record([t.to_string(), s.ell.to_string(), format!("{{{}}}", entries.join(","))])?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV `i, t_i, s_i`.
pub fn write_switch_csv<W: Write>(w: W, sol: &PiecewiseSolution) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["i", "t_i", "s_i"])?;
    for (k, (t, s)) in sol.switch_times.iter().zip(&sol.durations).enumerate() {
        wr.write_record([(k + 1).to_string(), t.to_string(), s.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
