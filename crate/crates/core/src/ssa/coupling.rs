//! Shared-randomness coupling for min-form kernels.
//!
//! With `K = min(phi(i), phi(j))` the active particle meets a uniformly chosen
//! other particle, so a step is fully described by an index `k` (merge with
//! the `k`-th smallest particle) and a unit exponential `eps`. Feeding the
//! same `(k, eps)` sequence to two processes with equally many particles
//! preserves the order of their sorted size vectors.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{first_dominance_violation, KernelKind, ParticleState, Phi, Size};
use crate::stats::CompensatedSum;

use super::Trajectory;

/// The `(k_m, eps_m)` sequence consumed by a coupled run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CouplingStream {
    /// `k_m`, uniform on `{2, ..., n - m + 1}`.
    pub partner_indices: Vec<u64>,
    pub exponentials: Vec<f64>,
}

impl CouplingStream {
    /// Draws the full stream for `n` particles.
    pub fn draw<R: Rng + ?Sized>(n: u64, rng: &mut R) -> Self {
        let steps = n.saturating_sub(1) as usize;
        let mut s = Self {
            partner_indices: Vec::with_capacity(steps),
            exponentials: Vec::with_capacity(steps),
        };
        for m in 1..=n.saturating_sub(1) {
            s.partner_indices.push(rng.random_range(2..=n - m + 1));
            s.exponentials.push(rng.sample(Exp1));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.partner_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner_indices.is_empty()
    }

    /// True when every index is in range for `n` particles and every
    /// exponential is positive.
    pub fn is_valid_for(&self, n: u64) -> bool {
        self.len() as u64 == n.saturating_sub(1)
            && self.exponentials.len() == self.len()
            && self
                .partner_indices
                .iter()
                .enumerate()
                .all(|(i, &k)| (2..=n - i as u64).contains(&k))
            && self.exponentials.iter().all(|&e| e > 0.0)
    }
}

/// Output of [`coupled_simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub x: Trajectory,
    pub y: Trajectory,
    pub stream: CouplingStream,
}

/// Runs one min-form process to a singleton driven by `stream`.
pub fn drive(x0: &ParticleState, phi: &Phi, stream: &CouplingStream) -> Result<Trajectory> {
    let mut traj = Trajectory::start(x0.clone(), KernelKind::MinForm)?;
    let n = x0.total_count();
    if !stream.is_valid_for(n) {
        return Err(Error::InvalidParameter(format!(
            "coupling stream of length {} does not fit {n} particles",
            stream.len()
        )));
    }
    let mut clock = CompensatedSum::new();
    for (m, (&k, &eps)) in stream
        .partner_indices
        .iter()
        .zip(&stream.exponentials)
        .enumerate()
    {
        let state = &mut traj.final_state;
        let l = state.min_size()?;
        let partner = state.kth_smallest(k).expect("index checked against count");
        clock.add(eps / ((n - m as u64 - 1) as f64 * phi.at(l)));
        state.merge(l, partner)?;
        traj.record(clock.value(), l, partner, eps);
    }
    Ok(traj)
}

/// Simulates a min-form process from `x0` to a singleton using uniform
/// partner indices.
pub fn run_min_form<R: Rng + ?Sized>(x0: &ParticleState, phi: &Phi, rng: &mut R) -> Result<Trajectory> {
    let stream = CouplingStream::draw(x0.total_count(), rng);
    drive(x0, phi, &stream)
}

/// `T^{x0}` of a min-form process without recording the path. Consumes the
/// random stream exactly like [`run_min_form`], so both give the same time.
pub fn sample_lifetime<R: Rng + ?Sized>(x0: &ParticleState, phi: &Phi, rng: &mut R) -> Result<f64> {
    let n = x0.total_count();
    let mut state = x0.clone();
    let mut clock = CompensatedSum::new();
    for m in 1..n {
        let k = rng.random_range(2..=n - m + 1);
        let eps: f64 = rng.sample(Exp1);
        let l = state.min_size()?;
        let partner = state.kth_smallest(k).expect("index within count");
        clock.add(eps / ((n - m) as f64 * phi.at(l)));
        state.merge(l, partner)?;
    }
    Ok(clock.value())
}

/// Runs `x0` and `y0` on one shared stream. Requires equal particle counts
/// and `S_m(y0) <= S_m(x0)` for every `m`; the same order is checked after
/// every event.
pub fn coupled_simulate<R: Rng + ?Sized>(
    x0: &ParticleState,
    y0: &ParticleState,
    phi: &Phi,
    rng: &mut R,
) -> Result<CoupledRun> {
    let n = x0.total_count();
    if n < 2 {
        return Err(Error::TerminalState { count: n });
    }
    if let Some(index) = first_dominance_violation(y0, x0) {
        return Err(Error::DominanceViolation { index });
    }
    let stream = CouplingStream::draw(n, rng);
    let x = drive(x0, phi, &stream)?;
    let y = drive(y0, phi, &stream)?;

    let mut rx = super::Replay::new(&x);
    let mut ry = super::Replay::new(&y);
    while rx.advance()?.is_some() {
        ry.advance()?;
        if let Some(index) = first_dominance_violation(ry.state(), rx.state()) {
            return Err(Error::DominanceViolation { index });
        }
    }
    Ok(CoupledRun { x, y, stream })
}

/// Returns `(T_i from n e_i, T_1 from n e_1)` on one shared stream.
pub fn scaling_coupling<R: Rng + ?Sized>(n: u64, i: Size, phi: &Phi, rng: &mut R) -> Result<(f64, f64)> {
    if n < 2 || i == 0 {
        return Err(Error::InvalidParameter("need n >= 2 and i >= 1".into()));
    }
    let stream = CouplingStream::draw(n, rng);
    let ti = drive(&ParticleState::monodisperse(i, n)?, phi, &stream)?
        .exhaustion_time(i)
        .expect("singleton run exhausts its initial size");
    let t1 = drive(&ParticleState::monodisperse(1, n)?, phi, &stream)?
        .exhaustion_time(1)
        .expect("singleton run exhausts its initial size");
    Ok((ti, t1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamRole};
    use crate::ssa::replay_t_from_representation;

    fn st(p: &[(u64, u64)]) -> ParticleState {
        ParticleState::from_counts(p.iter().copied()).unwrap()
    }

    #[test]
    fn stream_ranges() {
        let mut rng = stream(1, 0, StreamRole::Coupling);
        let s = CouplingStream::draw(6, &mut rng);
        assert_eq!(s.len(), 5);
        assert!(s.is_valid_for(6));
        assert_eq!(*s.partner_indices.last().unwrap(), 2);
        assert!(CouplingStream::draw(1, &mut rng).is_empty());
    }

    #[test]
    fn dominated_pair_orders_times() {
        let phi = Phi::Power(1.0);
        let y0 = st(&[(1, 4)]);
        let x0 = st(&[(1, 2), (3, 1), (4, 1)]);
        for r in 0..500 {
            let mut rng = stream(4, r, StreamRole::Coupling);
            let run = coupled_simulate(&x0, &y0, &phi, &mut rng).unwrap();
            assert!(run.x.t_last.unwrap() <= run.y.t_last.unwrap());
            // y ends as a single particle of size 4, so its T_4 is infinite
            for i in 1..=8 {
                let tx = run.x.exhaustion_time(i).unwrap();
                let ty = run.y.exhaustion_time(i).unwrap_or(f64::INFINITY);
                assert!(tx <= ty);
            }
        }
    }

    #[test]
    fn identical_inputs_identical_paths() {
        let phi = Phi::Power(2.0);
        let x0 = st(&[(1, 3), (2, 2), (5, 1)]);
        let mut rng = stream(9, 0, StreamRole::Coupling);
        let run = coupled_simulate(&x0, &x0, &phi, &mut rng).unwrap();
        assert_eq!(run.x, run.y);
    }

    #[test]
    fn single_step_pair() {
        let phi = Phi::Power(1.0);
        let mut rng = stream(9, 1, StreamRole::Coupling);
        let run = coupled_simulate(&st(&[(1, 1), (2, 1)]), &st(&[(1, 2)]), &phi, &mut rng).unwrap();
        assert_eq!(run.x.t_last, run.y.t_last);
        assert_eq!(run.x.t_last, Some(run.stream.exponentials[0]));
    }

    #[test]
    fn dominance_precondition() {
        let phi = Phi::Const(1.0);
        let mut rng = stream(9, 2, StreamRole::Coupling);
        let e = coupled_simulate(&st(&[(1, 4)]), &st(&[(1, 2), (3, 1), (4, 1)]), &phi, &mut rng);
        assert_eq!(e, Err(Error::DominanceViolation { index: 3 }));
        let e = coupled_simulate(&st(&[(1, 4)]), &st(&[(1, 3)]), &phi, &mut rng);
        assert_eq!(e, Err(Error::DominanceViolation { index: 0 }));
    }

    #[test]
    fn scaling_ratios() {
        let phi = Phi::Power(1.0);
        let mut rng = stream(3, 0, StreamRole::Coupling);
        let (ti, t1) = scaling_coupling(5, 3, &phi, &mut rng).unwrap();
        assert!((ti / t1 - 1.0 / 3.0).abs() < 1e-14);
        let (ti, t1) = scaling_coupling(50, 1, &phi, &mut rng).unwrap();
        assert_eq!(ti, t1);
        let phi2 = Phi::Power(2.0);
        for i in [2u64, 3, 7] {
            let (ti, t1) = scaling_coupling(2, i, &phi2, &mut rng).unwrap();
            assert!((ti / t1 - 1.0 / (i * i) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn lean_lifetime_matches_recorded_run() {
        let phi = Phi::Power(2.0);
        let x0 = st(&[(1, 30), (2, 4)]);
        for r in 0..20 {
            let a = run_min_form(&x0, &phi, &mut stream(6, r, StreamRole::Simulation)).unwrap();
            let b = sample_lifetime(&x0, &phi, &mut stream(6, r, StreamRole::Simulation)).unwrap();
            assert_eq!(a.t_last, Some(b));
        }
    }

    #[test]
    fn uniform_runs_satisfy_representation() {
        let phi = Phi::LogPow { a0: 1.0, alpha: 0.5 };
        let mut rng = stream(8, 0, StreamRole::Simulation);
        let x0 = st(&[(1, 20), (3, 5)]);
        let tr = run_min_form(&x0, &phi, &mut rng).unwrap();
        assert_eq!(tr.events.len(), 24);
        assert_eq!(tr.replay().unwrap(), tr.final_state);
        let t = replay_t_from_representation(&tr, &phi).unwrap();
        assert!(((t - tr.t_last.unwrap()) / t).abs() < 1e-12);
    }
}
