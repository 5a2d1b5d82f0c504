//! Exact stochastic simulation of the min-driven coalescence process.
//!
//! In state `X` with minimal size `l`, the active particle of size `l` merges
//! with a particle of size `j > l` at rate `K(l,j) X_j` and with another
//! particle of size `l` at rate `K(l,l) (X_l - 1)`. The waiting time is
//! exponential with the total rate `lambda = sum_{j>=l} K(l,j) X_j - K(l,l)`.

mod coupling;
mod export;
mod generator;

pub use coupling::{
    coupled_simulate, drive, run_min_form, sample_lifetime, scaling_coupling, CoupledRun,
    CouplingStream,
};
pub use export::{read_trajectory_jsonl, write_trajectory_jsonl, TrajectoryHeader};
pub use generator::{
    drift, generator_consistency, local_variance, ComponentCheck, GeneratorReport,
};

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{KernelKind, Kernel, ParticleState, Phi, Size};
use crate::stats::CompensatedSum;

/// One coalescence channel: merge the active particle with a `partner`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Channel {
    pub partner: Size,
    pub rate: f64,
}

/// Outgoing transitions of a state. Zero-rate channels are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpMenu {
    pub min_size: Size,
    pub channels: Vec<Channel>,
    pub total_rate: f64,
}

impl JumpMenu {
    /// Partner-size probabilities `rate / lambda`.
    pub fn probabilities(&self) -> Vec<(Size, f64)> {
        self.channels
            .iter()
            .map(|c| (c.partner, c.rate / self.total_rate))
            .collect()
    }

    fn sample_partner(&self, u: f64) -> Size {
        let target = u * self.total_rate;
        let mut acc = 0.0;
        for c in &self.channels {
            acc += c.rate;
            if target < acc {
                return c.partner;
            }
        }
        // rounding at the top end of the cumulative sum
        self.channels.last().expect("menu has a channel").partner
    }
}

pub fn jump_menu(state: &ParticleState, k: &Kernel) -> Result<JumpMenu> {
    if state.total_count() < 2 {
        return Err(Error::TerminalState {
            count: state.total_count(),
        });
    }
    let l = state.min_size()?;
    let mut channels = Vec::with_capacity(state.support_len());
    let mut total = CompensatedSum::new();
    for (j, xj) in state.iter() {
        let mult = if j == l { xj - 1 } else { xj };
        if mult == 0 {
            continue;
        }
        let rate = k.eval(l, j) * mult as f64;
        if rate > 0.0 {
            channels.push(Channel { partner: j, rate });
            total.add(rate);
        }
    }
    if channels.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "kernel {} gives zero total rate at minimal size {l}",
            k.name()
        )));
    }
    Ok(JumpMenu {
        min_size: l,
        channels,
        total_rate: total.value(),
    })
}

/// Partner-size probabilities under the min-form shortcut: the partner is a
/// uniformly chosen particle among the other `n - 1`.
pub fn uniform_partner_distribution(state: &ParticleState) -> Result<Vec<(Size, f64)>> {
    let n = state.total_count();
    if n < 2 {
        return Err(Error::TerminalState { count: n });
    }
    let l = state.min_size()?;
    Ok(state
        .iter()
        .filter_map(|(j, c)| {
            let c = if j == l { c - 1 } else { c };
            (c > 0).then(|| (j, c as f64 / (n - 1) as f64))
        })
        .collect())
}

/// Result of a single jump.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub dt: f64,
    pub partner: Size,
    pub min_size: Size,
    /// Unit exponential variate; `dt = variate / lambda`.
    pub variate: f64,
    pub next: ParticleState,
}

/// Samples the next jump of `state`.
pub fn step<R: Rng + ?Sized>(state: &ParticleState, k: &Kernel, rng: &mut R) -> Result<StepOutcome> {
    let mut next = state.clone();
    let j = step_in_place(&mut next, k, rng)?;
    Ok(StepOutcome {
        dt: j.dt,
        partner: j.partner,
        min_size: j.min_size,
        variate: j.variate,
        next,
    })
}

#[derive(Debug, Clone, Copy)]
struct Jump {
    dt: f64,
    partner: Size,
    min_size: Size,
    variate: f64,
}

fn draw_jump<R: Rng + ?Sized>(state: &ParticleState, k: &Kernel, rng: &mut R) -> Result<Jump> {
    let menu = jump_menu(state, k)?;
    let variate: f64 = rng.sample(Exp1);
    let u: f64 = rng.random();
    Ok(Jump {
        dt: variate / menu.total_rate,
        partner: menu.sample_partner(u),
        min_size: menu.min_size,
        variate,
    })
}

fn step_in_place<R: Rng + ?Sized>(state: &mut ParticleState, k: &Kernel, rng: &mut R) -> Result<Jump> {
    let j = draw_jump(state, k, rng)?;
    state.merge(j.min_size, j.partner)?;
    Ok(j)
}

/// When [`simulate`] stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    UntilSingleton,
    UntilTime(f64),
    UntilMinSizeAtLeast(Size),
    /// Runs until both the time has passed and the minimal size is reached.
    UntilTimeAndMinSize { time: f64, min_size: Size },
}

/// One coalescence event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    /// Size of the particle the active one merged with.
    pub partner: Size,
    /// Minimal size just before the event.
    pub min_size: Size,
}

/// A simulated path stored as its initial state plus the event list.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: ParticleState,
    pub events: Vec<Event>,
    /// Unit exponential variate of each event.
    pub variates: Vec<f64>,
    pub final_state: ParticleState,
    /// `(new minimal size, time)` for every event that raised the minimal size.
    pub min_switches: Vec<(Size, f64)>,
    /// Time of the last coalescence, set once a single particle remains.
    pub t_last: Option<f64>,
    /// Time at which the simulation stopped.
    pub end_time: f64,
    pub kernel_kind: KernelKind,
    /// False when the stop condition could not be met before a singleton.
    pub stop_reached: bool,
}

impl Trajectory {
    fn start(initial: ParticleState, kind: KernelKind) -> Result<Self> {
        initial.min_size()?;
        let t_last = (initial.total_count() == 1).then_some(0.0);
        Ok(Self {
            final_state: initial.clone(),
            initial,
            events: Vec::new(),
            variates: Vec::new(),
            min_switches: Vec::new(),
            t_last,
            end_time: 0.0,
            kernel_kind: kind,
            stop_reached: true,
        })
    }

    /// Appends an event already applied to `final_state`.
    fn record(&mut self, t: f64, min_before: Size, partner: Size, variate: f64) {
        self.events.push(Event {
            t,
            partner,
            min_size: min_before,
        });
        self.variates.push(variate);
        self.end_time = t;
        let min_after = self
            .final_state
            .min_size()
            .expect("coalescence keeps at least one particle");
        if min_after > min_before {
            self.min_switches.push((min_after, t));
        }
        if self.final_state.total_count() == 1 {
            self.t_last = Some(t);
        }
    }

    /// `L(m)`: minimal size before the `m`-th event.
    pub fn min_size_sequence(&self) -> Vec<Size> {
        self.events.iter().map(|e| e.min_size).collect()
    }

    /// `T_i`: first time all particles of size `<= i` are gone (0 when the
    /// initial minimal size already exceeds `i`).
    pub fn exhaustion_time(&self, i: Size) -> Option<f64> {
        if self.initial.min_size().ok()? > i {
            return Some(0.0);
        }
        let k = self.min_switches.partition_point(|&(m, _)| m <= i);
        self.min_switches.get(k).map(|&(_, t)| t)
    }

    /// Re-applies the events to the initial state; returns the resulting
    /// state after checking mass conservation at each step.
    pub fn replay(&self) -> Result<ParticleState> {
        let mut r = Replay::new(self);
        while r.advance()?.is_some() {}
        Ok(r.into_state())
    }
}

/// Walks a trajectory event by event.
pub struct Replay<'a> {
    traj: &'a Trajectory,
    state: ParticleState,
    next: usize,
}

impl<'a> Replay<'a> {
    pub fn new(traj: &'a Trajectory) -> Self {
        Self {
            traj,
            state: traj.initial.clone(),
            next: 0,
        }
    }

    pub fn state(&self) -> &ParticleState {
        &self.state
    }

    /// Time of the next event, if any.
    pub fn peek_time(&self) -> Option<f64> {
        self.traj.events.get(self.next).map(|e| e.t)
    }

    /// Applies the next event and returns it.
    pub fn advance(&mut self) -> Result<Option<Event>> {
        let Some(ev) = self.traj.events.get(self.next).copied() else {
            return Ok(None);
        };
        let l = self.state.min_size()?;
        if l != ev.min_size {
            return Err(Error::ReplayMismatch {
                reason: format!("event {} expects minimal size {}, found {l}", self.next, ev.min_size),
            });
        }
        let mass = self.state.total_mass();
        self.state.merge(l, ev.partner)?;
        if self.state.total_mass() != mass {
            return Err(Error::ReplayMismatch {
                reason: format!("mass changed at event {}", self.next),
            });
        }
        self.next += 1;
        Ok(Some(ev))
    }

    pub fn into_state(self) -> ParticleState {
        self.state
    }
}

/// Runs the exact jump process from `x0` until `stop`.
pub fn simulate<R: Rng + ?Sized>(
    x0: &ParticleState,
    k: &Kernel,
    stop: StopRule,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut traj = Trajectory::start(x0.clone(), k.kind())?;
    let mut clock = CompensatedSum::new();
    let (horizon, target_min) = match stop {
        StopRule::UntilSingleton => (f64::INFINITY, 0),
        StopRule::UntilTime(t) => (t, 0),
        StopRule::UntilMinSizeAtLeast(i) => (f64::INFINITY, i),
        StopRule::UntilTimeAndMinSize { time, min_size } => (time, min_size),
    };
    loop {
        let min_done = traj.final_state.min_size()? >= target_min;
        if matches!(stop, StopRule::UntilMinSizeAtLeast(_)) && min_done {
            break;
        }
        if traj.final_state.total_count() < 2 {
            traj.stop_reached = min_done;
            break;
        }
        let jump = draw_jump(&traj.final_state, k, rng)?;
        let mut probe = clock;
        probe.add(jump.dt);
        let t_next = probe.value();
        if t_next > horizon && min_done {
            break;
        }
        traj.final_state.merge(jump.min_size, jump.partner)?;
        clock = probe;
        traj.record(t_next, jump.min_size, jump.partner, jump.variate);
    }
    if horizon.is_finite() {
        traj.end_time = traj.end_time.max(horizon);
    }
    Ok(traj)
}

/// Recomputes `T = sum_m eps_m / ((n - m) phi(L(m)))` from the stored
/// variates and minimal sizes of a min-form trajectory run to a singleton.
pub fn replay_t_from_representation(traj: &Trajectory, phi: &Phi) -> Result<f64> {
    if traj.kernel_kind != KernelKind::MinForm {
        return Err(Error::ReplayMismatch {
            reason: "trajectory was not generated by a min-form kernel".into(),
        });
    }
    if traj.variates.len() != traj.events.len() {
        return Err(Error::ReplayMismatch {
            reason: "trajectory lacks stored exponential variates".into(),
        });
    }
    let n = traj.initial.total_count();
    if traj.t_last.is_none() || traj.events.len() as u64 + 1 != n {
        return Err(Error::ReplayMismatch {
            reason: "trajectory did not run to a single particle".into(),
        });
    }
    let mut sum = CompensatedSum::new();
    for (m, (ev, eps)) in traj.events.iter().zip(&traj.variates).enumerate() {
        let remaining = n - (m as u64 + 1);
        sum.add(eps / (remaining as f64 * phi.at(ev.min_size)));
    }
    Ok(sum.value())
}
