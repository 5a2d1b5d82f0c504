//! First and second infinitesimal moments of the rescaled process `X / N`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Kernel, ParticleState, Size, SparseVec};
use crate::rng::{stream, StreamRole};
use crate::ssa::{jump_menu, simulate, StopRule};

fn active_size(xi: &SparseVec) -> Result<(Size, f64)> {
    xi.iter()
        .find(|(_, &v)| v > 0.0)
        .map(|(&s, &v)| (s, v))
        .ok_or(Error::EmptyState)
}

fn bump(out: &mut SparseVec, j: Size, v: f64) {
    *out.entry(j).or_insert(0.0) += v;
}

/// Drift of the rescaled process in state `xi` with mass scale `n`.
///
/// With `l` the minimal size:
/// `b_l = -sum_{j>l} K(l,j) xi_j - 2 K(l,l) xi_l + 2 K(l,l)/N`,
/// `b_{2l} = K(l,l)(xi_l - 1/N) - K(l,2l) xi_{2l}`,
/// `b_j = K(l,j-l) xi_{j-l} - K(l,j) xi_j` for the other `j > l`.
pub fn drift(xi: &SparseVec, k: &Kernel, n: u64) -> Result<SparseVec> {
    let (l, xl) = active_size(xi)?;
    let inv_n = 1.0 / n as f64;
    let kll = k.eval(l, l);
    let mut out = SparseVec::new();
    let mut loss = 0.0;
    for (&j, &xj) in xi.range(l + 1..) {
        if xj == 0.0 {
            continue;
        }
        let r = k.eval(l, j) * xj;
        loss += r;
        bump(&mut out, j, -r);
        bump(&mut out, j + l, r);
    }
    bump(&mut out, l, -loss - 2.0 * kll * xl + 2.0 * kll * inv_n);
    bump(&mut out, 2 * l, kll * (xl - inv_n));
    out.retain(|_, v| *v != 0.0);
    debug_assert!({
        let m: f64 = out.iter().map(|(&j, v)| j as f64 * v).sum();
        let scale: f64 = out.iter().map(|(&j, v)| (j as f64 * v).abs()).sum();
        m.abs() <= 1e-9 * scale.max(1.0)
    });
    Ok(out)
}

/// Componentwise local variance `sum_jumps rate * (jump_j)^2` of the
/// rescaled process. Every component carries a `1/N` prefactor.
pub fn local_variance(xi: &SparseVec, k: &Kernel, n: u64) -> Result<SparseVec> {
    let (l, xl) = active_size(xi)?;
    let inv_n = 1.0 / n as f64;
    let kll = k.eval(l, l);
    let mut out = SparseVec::new();
    let mut loss = 0.0;
    for (&j, &xj) in xi.range(l + 1..) {
        if xj == 0.0 {
            continue;
        }
        let r = k.eval(l, j) * xj;
        loss += r;
        bump(&mut out, j, r * inv_n);
        bump(&mut out, j + l, r * inv_n);
    }
    bump(
        &mut out,
        l,
        loss * inv_n + 4.0 * kll * xl * inv_n - 4.0 * kll * inv_n * inv_n,
    );
    bump(&mut out, 2 * l, kll * (xl - inv_n) * inv_n);
    out.retain(|_, v| *v != 0.0);
    Ok(out)
}

/// Empirical versus predicted mean increment of one component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub size: Size,
    pub mean_increment: f64,
    pub predicted: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub h: f64,
    pub replicas: u64,
    /// `lambda * h` at the initial state.
    pub load: f64,
    pub components: Vec<ComponentCheck>,
    pub max_abs_z: f64,
}

/// Compares the Monte Carlo mean of `(X(h) - X(0)) / N` with `drift * h`.
pub fn generator_consistency(
    x0: &ParticleState,
    k: &Kernel,
    h: f64,
    replicas: u64,
    seed: u64,
) -> Result<GeneratorReport> {
    if !(h > 0.0) || replicas < 2 {
        return Err(Error::InvalidParameter("need h > 0 and at least 2 replicas".into()));
    }
    let menu = jump_menu(x0, k)?;
    let load = menu.total_rate * h;
    if load >= 0.2 {
        return Err(Error::StepTooLarge { load });
    }
    let n = x0.total_mass();
    let scale = n as f64;
    let predicted = drift(&x0.rescaled(scale), k, n)?;

    let increments: Vec<Vec<(Size, i64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r, StreamRole::Generator);
            let tr = simulate(x0, k, StopRule::UntilTime(h), &mut rng)?;
            let mut d: BTreeMap<Size, i64> = BTreeMap::new();
            for (s, c) in tr.final_state.iter() {
                *d.entry(s).or_insert(0) += c as i64;
            }
            for (s, c) in x0.iter() {
                *d.entry(s).or_insert(0) -= c as i64;
            }
            Ok(d.into_iter().filter(|&(_, v)| v != 0).collect())
        })
        .collect::<Result<_>>()?;

    let mut sum: BTreeMap<Size, f64> = predicted.keys().map(|&s| (s, 0.0)).collect();
    let mut sum_sq: BTreeMap<Size, f64> = BTreeMap::new();
    for inc in &increments {
        for &(s, v) in inc {
            let v = v as f64 / scale;
            *sum.entry(s).or_insert(0.0) += v;
            *sum_sq.entry(s).or_insert(0.0) += v * v;
        }
    }
    let rf = replicas as f64;
    let components: Vec<ComponentCheck> = sum
        .iter()
        .map(|(&s, &total)| {
            let mean = total / rf;
            let sq = sum_sq.get(&s).copied().unwrap_or(0.0);
            let var = ((sq - rf * mean * mean) / (rf - 1.0)).max(0.0);
            let stderr = (var / rf).sqrt();
            let pred = predicted.get(&s).copied().unwrap_or(0.0) * h;
            let z = if stderr > 0.0 {
                (mean - pred) / stderr
            } else if mean == pred {
                0.0
            } else {
                f64::INFINITY
            };
            ComponentCheck {
                size: s,
                mean_increment: mean,
                predicted: pred,
                stderr,
                z,
            }
        })
        .collect();
    let max_abs_z = components.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    Ok(GeneratorReport {
        h,
        replicas,
        load,
        components,
        max_abs_z,
    })
}
