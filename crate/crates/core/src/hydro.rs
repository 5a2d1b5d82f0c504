//! Comparison of rescaled stochastic paths with the deterministic solution.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Kernel, ParticleState, Size};
use crate::ode::{integrate_piecewise, PiecewiseSolution, PiecewiseStop, SolverControls};
use crate::rng::{stream, StreamRole};
use crate::ssa::{simulate, StopRule, Trajectory};
use crate::stats::{median, ols, quantile};

/// Outcome of [`discretize_initial`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discretization {
    pub state: ParticleState,
    /// Largest size resolved by rounding; mass above it goes to size 1.
    pub cutoff: Size,
    /// `||X / N - x0||_1`.
    pub error: f64,
    /// Guaranteed upper bound on `error`.
    pub bound: f64,
}

/// Turns a unit-mass density into `N` units of mass. Sizes `J, ..., 2` are
/// rounded down with the rounding remainder carried to the next smaller
/// size; everything left, including the mass above `J`, becomes size 1.
/// `J = min(largest support point, ceil(sqrt N))`.
///
/// Each of the sizes `2..=J` is off by less than `(j+1)/j` particles and
/// size 1 by less than 2 plus the tail mass, which gives the bound
/// `(2 + sum_{j=2}^J (j+1)/j) / N + sum_{j>J} (j+1) x_j`.
pub fn discretize_initial(x0: &[f64], n: u64) -> Result<Discretization> {
    if n < 2 {
        return Err(Error::InvalidParameter("need N >= 2".into()));
    }
    if let Some(k) = x0.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::BadEntry { size: k as Size + 1 });
    }
    let support = x0.iter().rposition(|&v| v > 0.0).ok_or(Error::ZeroMass)? + 1;
    let j_cut = support.min((n as f64).sqrt().ceil() as usize).max(1);
    let nf = n as f64;

    let mut counts: Vec<(Size, u64)> = Vec::new();
    let mut used: u64 = 0;
    let mut carry = 0.0;
    for j in (2..=j_cut).rev() {
        let target = nf * j as f64 * x0[j - 1] + carry;
        // guard against targets such as 5.999999999 meant as 6
        let c = ((target / j as f64) + 1e-9).floor().max(0.0) as u64;
        carry = (target - (c * j as u64) as f64).max(0.0);
        if c > 0 {
            counts.push((j as Size, c));
            used += c * j as u64;
        }
    }
    if used > n {
        return Err(Error::Infeasible { n });
    }
    let rest = n - used;
    if rest > 0 {
        if x0[0] <= 0.0 {
            return Err(Error::Infeasible { n });
        }
        counts.push((1, rest));
    }
    let state = ParticleState::from_counts(counts)?;
    let error = l1_distance(&state, nf, x0);
    let bound = (2.0 + (2..=j_cut).map(|j| (j + 1) as f64 / j as f64).sum::<f64>()) / nf
        + x0.iter()
            .enumerate()
            .skip(j_cut)
            .map(|(k, v)| (k + 2) as f64 * v)
            .sum::<f64>();
    Ok(Discretization {
        state,
        cutoff: j_cut as Size,
        error,
        bound,
    })
}

/// `sum_j |X_j / N - x_j|` for a dense `x` (index 0 is size 1).
pub fn l1_distance(state: &ParticleState, n: f64, x: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut covered = 0.0;
    for (s, c) in state.iter() {
        let xs = x.get(s as usize - 1).copied().unwrap_or(0.0);
        d += (c as f64 / n - xs).abs();
        covered += xs.abs();
    }
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    d + (total - covered).max(0.0)
}

/// `sup_s ||X(s) / N - x(s)||_1` over `[0, horizon]`, evaluated at every
/// event time (before and after the jump) and on `grid` equally spaced
/// points. A path that reached a single particle earlier is compared up to
/// its last event.
pub fn trajectory_distance(
    traj: &Trajectory,
    sol: &PiecewiseSolution,
    n: u64,
    horizon: f64,
    grid: usize,
) -> Result<f64> {
    if horizon > sol.coverage() {
        return Err(Error::HorizonExceedsSolution {
            horizon,
            coverage: sol.coverage(),
        });
    }
    let end = match traj.t_last {
        Some(t) if t < horizon => t,
        _ => horizon,
    };
    let nf = n as f64;
    let mut buf = Vec::new();
    let mut dist = |state: &ParticleState, t: f64| -> Result<f64> {
        sol.fill_at(t, &mut buf)?;
        Ok(l1_distance(state, nf, &buf))
    };

    let mut sup: f64 = 0.0;
    let mut state = traj.initial.clone();
    let mut events = traj.events.iter().peekable();
    let points = grid.max(1);
    for g in 0..=points {
        let tg = end * g as f64 / points as f64;
        while let Some(e) = events.next_if(|e| e.t <= tg) {
            sup = sup.max(dist(&state, e.t)?);
            state.merge(e.min_size, e.partner)?;
            sup = sup.max(dist(&state, e.t)?);
        }
        sup = sup.max(dist(&state, tg)?);
    }
    Ok(sup)
}

/// Parameters of [`convergence_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConfig {
    pub horizon: f64,
    pub n_values: Vec<u64>,
    pub replicas: u64,
    pub seed: u64,
    pub grid: usize,
    /// Switch times `T_i` are compared for `i = 1..=I`, where `I` is the
    /// number of deterministic switches before the horizon but at least
    /// this value. The stochastic runs continue past the horizon as long as
    /// needed to observe them.
    pub min_tracked_switches: Size,
}

impl ConvergenceConfig {
    pub fn new(horizon: f64, n_values: Vec<u64>, replicas: u64, seed: u64) -> Self {
        Self {
            horizon,
            n_values,
            replicas,
            seed,
            grid: 512,
            min_tracked_switches: 1,
        }
    }
}

/// Error statistics at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub n: u64,
    pub median_error: f64,
    pub q25: f64,
    pub q75: f64,
    /// Distance at time 0 (the discretisation error).
    pub initial_error: f64,
}

/// `|T_i^N - t_i|` across replicas at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchDeviation {
    pub i: Size,
    pub t_i: f64,
    pub n: u64,
    pub median_abs: f64,
    pub q25: f64,
    pub q75: f64,
    pub max_abs: f64,
    /// One entry per replica; NaN when the path never exhausted size `i`.
    pub deviations: Vec<f64>,
}

impl SwitchDeviation {
    /// Fraction of replicas with `|T_i^N - t_i| <= tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        let ok = self.deviations.iter().filter(|&&d| d <= tol).count();
        ok as f64 / self.deviations.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRun {
    pub config: ConvergenceConfig,
    pub kernel: String,
    /// `sup_errors[k][r]` for `N = n_values[k]` and replica `r`.
    pub sup_errors: Vec<Vec<f64>>,
    pub summaries: Vec<ErrorSummary>,
    pub switch_deviations: Vec<SwitchDeviation>,
    /// Least-squares slope of ln(median error) against ln N.
    pub fitted_slope: f64,
    pub deterministic_switch_times: Vec<f64>,
}

/// Runs the replica ensemble for every `N` against one deterministic solve.
pub fn convergence_experiment(
    x0: &[f64],
    k: &Kernel,
    cfg: &ConvergenceConfig,
    controls: &SolverControls,
) -> Result<ConvergenceRun> {
    if cfg.n_values.is_empty() || cfg.replicas == 0 || !(cfg.horizon > 0.0) {
        return Err(Error::InvalidParameter(
            "need N values, replicas and a positive horizon".into(),
        ));
    }
    let mut sol = integrate_piecewise(x0, k, PiecewiseStop::time(cfg.horizon), controls)?;
    let before = sol.switch_times.len() as Size;
    let tracked = before.max(cfg.min_tracked_switches);
    if tracked > before {
        let stop = PiecewiseStop::min_size(tracked);
        sol = integrate_piecewise(x0, k, stop, controls)?;
        if sol.coverage() < cfg.horizon {
            sol = integrate_piecewise(
                x0,
                k,
                PiecewiseStop {
                    max_min_size: None,
                    max_time: Some(cfg.horizon),
                },
                controls,
            )?;
        }
    }
    let t_det: Vec<f64> = (1..=tracked).map(|i| sol.t(i).unwrap_or(f64::NAN)).collect();

    let mut sup_errors = Vec::with_capacity(cfg.n_values.len());
    let mut summaries = Vec::with_capacity(cfg.n_values.len());
    let mut switch_deviations = Vec::new();
    for (ni, &n) in cfg.n_values.iter().enumerate() {
        let disc = discretize_initial(x0, n)?;
        let stop = StopRule::UntilTimeAndMinSize {
            time: cfg.horizon,
            min_size: tracked + 1,
        };
        let per_replica: Vec<(f64, Vec<f64>)> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(cfg.seed, ((ni as u64) << 32) | r, StreamRole::Simulation);
                let traj = simulate(&disc.state, k, stop, &mut rng)?;
                let err = trajectory_distance(&traj, &sol, n, cfg.horizon, cfg.grid)?;
                let dev = (1..=tracked)
                    .map(|i| match traj.exhaustion_time(i) {
                        Some(t) => (t - t_det[i as usize - 1]).abs(),
                        None => f64::NAN,
                    })
                    .collect();
                Ok((err, dev))
            })
            .collect::<Result<_>>()?;
        let errs: Vec<f64> = per_replica.iter().map(|p| p.0).collect();
        summaries.push(ErrorSummary {
            n,
            median_error: median(&errs),
            q25: quantile(&errs, 0.25),
            q75: quantile(&errs, 0.75),
            initial_error: disc.error,
        });
        for i in 1..=tracked {
            let devs: Vec<f64> = per_replica.iter().map(|p| p.1[i as usize - 1]).collect();
            let finite: Vec<f64> = devs.iter().copied().filter(|d| d.is_finite()).collect();
            switch_deviations.push(SwitchDeviation {
                i,
                t_i: t_det[i as usize - 1],
                n,
                median_abs: median(&finite),
                q25: quantile(&finite, 0.25),
                q75: quantile(&finite, 0.75),
                max_abs: finite.iter().copied().fold(f64::NAN, f64::max),
                deviations: devs,
            });
        }
        sup_errors.push(errs);
    }
    let lx: Vec<f64> = summaries.iter().map(|s| (s.n as f64).ln()).collect();
    let ly: Vec<f64> = summaries.iter().map(|s| s.median_error.ln()).collect();
    let fitted_slope = if lx.len() >= 2 { ols(&lx, &ly).slope } else { f64::NAN };
    Ok(ConvergenceRun {
        config: cfg.clone(),
        kernel: k.name().to_string(),
        sup_errors,
        summaries,
        switch_deviations,
        fitted_slope,
        deterministic_switch_times: t_det,
    })
}

impl ConvergenceRun {
    /// Deviations of `T_i` at every `N`, in ladder order.
    pub fn deviations_for(&self, i: Size) -> Vec<&SwitchDeviation> {
        self.switch_deviations.iter().filter(|d| d.i == i).collect()
    }

    /// CSV `N, replica, sup_error`.
    pub fn write_errors_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["N", "replica", "sup_error"])?;
        for (n, errs) in self.config.n_values.iter().zip(&self.sup_errors) {
            for (r, e) in errs.iter().enumerate() {
                wr.write_record([n.to_string(), r.to_string(), e.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// CSV `N, median_error, q25, q75`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["N", "median_error", "q25", "q75"])?;
        for s in &self.summaries {
            wr.write_record([
                s.n.to_string(),
                s.median_error.to_string(),
                s.q25.to_string(),
                s.q75.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// JSON summary with the fitted slope and the `T_i` deviation table.
    pub fn summary_json(&self) -> serde_json::Value {
        let table: Vec<serde_json::Value> = self
            .switch_deviations
            .iter()
            .map(|d| {
                serde_json::json!({
                    "i": d.i,
                    "t_i": d.t_i,
                    "N": d.n,
                    "median_abs": d.median_abs,
                    "q25": d.q25,
                    "q75": d.q75,
                    "max_abs": d.max_abs,
                })
            })
            .collect();
        serde_json::json!({
            "kernel": self.kernel,
            "horizon": self.config.horizon,
            "replicas": self.config.replicas,
            "seed": self.config.seed,
            "fitted_slope": self.fitted_slope,
            "summaries": self.summaries,
            "switch_deviations": table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_examples() {
        let d = discretize_initial(&[1.0], 1000).unwrap();
        assert_eq!(d.state, ParticleState::monodisperse(1, 1000).unwrap());
        assert_eq!(d.error, 0.0);

        let x = [1.0 / 3.0, 1.0 / 3.0];
        let d = discretize_initial(&x, 9).unwrap();
        assert_eq!(d.state, ParticleState::from_counts([(1, 3), (2, 3)]).unwrap());
        assert!(d.error < 1e-15);

        let d = discretize_initial(&x, 10).unwrap();
        assert_eq!(d.state, ParticleState::from_counts([(1, 4), (2, 3)]).unwrap());
        let expect = (0.4f64 - 1.0 / 3.0).abs() + (0.3f64 - 1.0 / 3.0).abs();
        assert!((d.error - expect).abs() < 1e-15);
        assert!((d.error - 0.1).abs() < 1e-15);
        assert!(d.error <= d.bound);
    }

    #[test]
    fn discretize_infeasible_without_size_one() {
        // x0 = e_2 / 2 needs an even N
        let x = [0.0, 0.5];
        assert!(discretize_initial(&x, 10).is_ok());
        assert_eq!(discretize_initial(&x, 11), Err(Error::Infeasible { n: 11 }));
    }

    #[test]
    fn discretize_bound_holds_on_random_profiles() {
        use rand::Rng;
        let mut rng = stream(5, 0, StreamRole::Auxiliary);
        for _ in 0..300 {
            let len = rng.random_range(1..40usize);
            let mut x: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            x[0] += 0.1;
            let (x, _) = crate::model::normalize_initial(&x).unwrap();
            let n = rng.random_range(2..5000u64);
            let d = discretize_initial(&x, n).unwrap();
            assert_eq!(d.state.total_mass(), n);
            assert!(d.error <= d.bound + 1e-12, "{} > {}", d.error, d.bound);
        }
    }

    #[test]
    fn distance_at_zero_and_reflexive() {
        let k = Kernel::constant(1.0);
        let c = SolverControls {
            cap: 128,
            ..Default::default()
        };
        let sol = integrate_piecewise(&[1.0], &k, PiecewiseStop::time(0.5), &c).unwrap();
        let x0 = discretize_initial(&[1.0], 50).unwrap().state;
        let mut rng = stream(1, 0, StreamRole::Simulation);
        let tr = simulate(&x0, &k, StopRule::UntilTime(0.0), &mut rng).unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(trajectory_distance(&tr, &sol, 50, 0.0, 8).unwrap(), 0.0);

        let mut buf = Vec::new();
        sol.fill_at(0.3, &mut buf).unwrap();
        let mut other = Vec::new();
        sol.fill_at(0.3, &mut other).unwrap();
        assert_eq!(buf, other);

        let tr = simulate(&x0, &k, StopRule::UntilTime(0.5), &mut rng).unwrap();
        assert!(matches!(
            trajectory_distance(&tr, &sol, 50, 0.6, 8),
            Err(Error::HorizonExceedsSolution { .. })
        ));
    }

    #[test]
    fn distance_matches_brute_force() {
        let k = Kernel::constant(1.0);
        let c = SolverControls {
            cap: 128,
            ..Default::default()
        };
        let sol = integrate_piecewise(&[1.0], &k, PiecewiseStop::time(0.6), &c).unwrap();
        let x0 = ParticleState::monodisperse(1, 200).unwrap();
        let mut rng = stream(2, 0, StreamRole::Simulation);
        let tr = simulate(&x0, &k, StopRule::UntilTime(0.6), &mut rng).unwrap();
        let fast = trajectory_distance(&tr, &sol, 200, 0.6, 64).unwrap();

        // the same supremum from full states and full dense vectors
        let full = |s: &ParticleState, t: f64| {
            let x = sol.state_at(t).unwrap().x;
            let mut d = 0.0;
            for j in 1..=200u64 {
                d += (s.count(j) as f64 / 200.0 - x.get(j as usize - 1).copied().unwrap_or(0.0)).abs();
            }
            d
        };
        let mut sup: f64 = 0.0;
        let mut s2 = x0.clone();
        let mut states = vec![(0.0, s2.clone())];
        for e in &tr.events {
            sup = sup.max(full(&s2, e.t));
            s2.merge(e.min_size, e.partner).unwrap();
            sup = sup.max(full(&s2, e.t));
            states.push((e.t, s2.clone()));
        }
        for g in 0..=64 {
            let tg = 0.6 * g as f64 / 64.0;
            let k = states.partition_point(|(t, _)| *t <= tg) - 1;
            sup = sup.max(full(&states[k].1, tg));
        }
        assert!((fast - sup).abs() < 1e-12, "{fast} vs {sup}");
    }

    #[test]
    fn small_ensemble_runs() {
        let k = Kernel::constant(1.0);
        let c = SolverControls {
            cap: 128,
            ..Default::default()
        };
        let cfg = ConvergenceConfig::new(0.5, vec![100, 400], 4, 3);
        let run = convergence_experiment(&[1.0], &k, &cfg, &c).unwrap();
        assert_eq!(run.sup_errors.len(), 2);
        assert!(run.sup_errors.iter().flatten().all(|&e| e >= 0.0));
        assert_eq!(run.deterministic_switch_times.len(), 1);
        assert!((run.deterministic_switch_times[0] - 1.0).abs() < 1e-8);
        assert_eq!(run.deviations_for(1).len(), 2);
        let mut buf = Vec::new();
        run.write_summary_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("N,median_error,q25,q75\n100,"));
        assert!(run.summary_json()["fitted_slope"].is_number());
    }
}
