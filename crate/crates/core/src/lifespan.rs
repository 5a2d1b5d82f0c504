//! Lifespan analytics: blow-up of the deterministic minimal size and the
//! expected time of the last stochastic coalescence.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Kernel, ParticleState, Phi, SeriesClass, Size};
use crate::ode::{integrate_piecewise, moment, PiecewiseStop, SolverControls};
use crate::rng::{stream, StreamRole};
use crate::ssa::sample_lifetime;
use crate::stats::{harmonic, mean_stderr, wls, CompensatedSum};

/// Partial sums of `sum 1/(i phi(i))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesTest {
    pub cutoff: u64,
    /// `(i, S_i)` at `1, 2, 5, 10, 20, 50, ...` and at the cutoff.
    pub partial_sums: Vec<(u64, f64)>,
    pub classification: SeriesClass,
}

impl SeriesTest {
    pub fn last(&self) -> f64 {
        self.partial_sums.last().map_or(0.0, |p| p.1)
    }
}

pub fn series_test(phi: &Phi, cutoff: u64) -> Result<SeriesTest> {
    if cutoff < 10 {
        return Err(Error::InvalidParameter("series cutoff must be at least 10".into()));
    }
    let mut marks = Vec::new();
    let mut decade = 1u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let v = m * decade;
            if v >= cutoff {
                break 'outer;
            }
            marks.push(v);
        }
        decade *= 10;
    }
    marks.push(cutoff);

    let mut sum = CompensatedSum::new();
    let mut partial_sums = Vec::with_capacity(marks.len());
    let mut next = marks.iter().peekable();
    for i in 1..=cutoff {
        sum.add(1.0 / (i as f64 * phi.at(i)));
        if next.peek() == Some(&&i) {
            partial_sums.push((i, sum.value()));
            next.next();
        }
    }
    Ok(SeriesTest {
        cutoff,
        partial_sums,
        classification: phi.series_class(),
    })
}

/// Monte Carlo estimate of `E T` from `n e_1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeEstimate {
    pub n: u64,
    pub replicas: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `H_{n-1} / c` for constant `phi = c`.
    pub exact: Option<f64>,
    pub lower_bound: f64,
}

impl LifetimeEstimate {
    /// Distance from the exact value in standard errors.
    pub fn z_exact(&self) -> Option<f64> {
        self.exact.map(|e| (self.mean - e) / self.stderr)
    }

    pub fn respects_lower_bound(&self, z: f64) -> bool {
        self.mean >= self.lower_bound - z * self.stderr
    }
}

/// Largest replica count per `n`. Replica `r` of size `n` reads stream
/// `(n << 24) | r`, so ladders sharing a seed never reuse randomness.
pub const MAX_REPLICAS: usize = 1 << 24;

pub fn expected_t_monodisperse(n: u64, phi: &Phi, replicas: usize, seed: u64) -> Result<LifetimeEstimate> {
    if !(2..1 << 32).contains(&n) {
        return Err(Error::InvalidParameter(format!("n = {n} outside 2..2^32")));
    }
    if !(2..=MAX_REPLICAS).contains(&replicas) {
        return Err(Error::InvalidParameter(format!("replicas = {replicas} outside 2..2^24")));
    }
    let x0 = ParticleState::monodisperse(1, n)?;
    let times = (0..replicas as u64)
        .into_par_iter()
        .map(|r| sample_lifetime(&x0, phi, &mut stream(seed, (n << 24) | r, StreamRole::Sampling)))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_stderr(&times);
    Ok(LifetimeEstimate {
        n,
        replicas,
        mean,
        stderr,
        exact: phi.is_constant().map(|c| harmonic(n - 1) / c),
        lower_bound: lower_bound_check(n, phi)?,
    })
}

/// `sum_{m=1}^{n-1} 1 / (m phi(n/m))`, a lower bound on `E T` from `n e_1`.
pub fn lower_bound_check(n: u64, phi: &Phi) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter("lower bound needs n >= 2".into()));
    }
    let nf = n as f64;
    Ok((1..n)
        .map(|m| {
            let mf = m as f64;
            1.0 / (mf * phi.eval(nf / mf))
        })
        .collect::<CompensatedSum>()
        .value())
}

/// Weighted line fit of mean against `ln n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub n_values: Vec<u64>,
    pub slope: f64,
    pub slope_stderr: f64,
}

impl SlopeFit {
    fn new(rows: &[LifetimeEstimate]) -> Self {
        let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        let w: Vec<f64> = rows.iter().map(|r| 1.0 / (r.stderr * r.stderr)).collect();
        let fit = wls(&x, &y, &w);
        Self {
            n_values: rows.iter().map(|r| r.n).collect(),
            slope: fit.slope,
            slope_stderr: fit.slope_stderr,
        }
    }

    /// Slope within `z` standard errors of zero.
    pub fn is_flat(&self, z: f64) -> bool {
        self.slope.abs() <= z * self.slope_stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomyReport {
    pub phi_name: String,
    pub series: SeriesTest,
    pub classification: SeriesClass,
    pub et_by_n: Vec<LifetimeEstimate>,
    /// Fit over the upper half of the ladder.
    pub tail_fit: SlopeFit,
    pub full_fit: SlopeFit,
    /// Tail slope within 3 standard errors of zero.
    pub plateau: bool,
    /// Full-ladder slope more than 3 standard errors above zero.
    pub growing: bool,
}

impl DichotomyReport {
    /// Whether the observed ladder agrees with the series classification:
    /// bounded means for a summable series, growing ones otherwise. Means
    /// that still decrease towards their limit count as bounded.
    pub fn consistent(&self) -> bool {
        match self.classification {
            SeriesClass::Summable => !self.growing,
            SeriesClass::Divergent => self.growing,
            SeriesClass::Inconclusive => true,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "replicas", "mean", "stderr", "exact", "lower_bound"])?;
        for r in &self.et_by_n {
            wr.write_record([
                r.n.to_string(),
                r.replicas.to_string(),
                r.mean.to_string(),
                r.stderr.to_string(),
                r.exact.map(|e| e.to_string()).unwrap_or_default(),
                r.lower_bound.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Upper end of the series test run alongside a scan.
const SCAN_SERIES_CUTOFF: u64 = 100_000;

/// `E T` from `n e_1` along a ladder of `n` for a min-form kernel.
pub fn dichotomy_scan(k: &Kernel, n_values: &[u64], replicas: usize, seed: u64) -> Result<DichotomyReport> {
    let phi = k.phi().ok_or(Error::NotMinForm)?;
    if n_values.len() < 4 {
        return Err(Error::InvalidParameter("ladder needs at least 4 values".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("ladder must be increasing".into()));
    }
    let et_by_n = n_values
        .iter()
        .map(|&n| expected_t_monodisperse(n, phi, replicas, seed))
        .collect::<Result<Vec<_>>>()?;
    let series = series_test(phi, SCAN_SERIES_CUTOFF)?;
    let tail_fit = SlopeFit::new(&et_by_n[et_by_n.len() / 2..]);
    let full_fit = SlopeFit::new(&et_by_n);
    Ok(DichotomyReport {
        phi_name: k.name().to_string(),
        classification: series.classification,
        series,
        plateau: tail_fit.is_flat(3.0),
        growing: full_fit.slope > 3.0 * full_fit.slope_stderr,
        et_by_n,
        tail_fit,
        full_fit,
    })
}

const ROUNDING: f64 = 1e-12;

type Seq = Arc<dyn Fn(Size) -> f64 + Send + Sync>;

/// Weights `(phi_i, psi_j, eps)` for the finite blow-up criterion
/// `K(i,j) >= phi_i` and `phi_i (psi_i - psi_{i+j}) >= eps` for `j >= i`.
#[derive(Clone)]
pub struct LyapunovWeights {
    pub name: String,
    pub phi: Seq,
    pub psi: Seq,
    pub epsilon: f64,
}

impl fmt::Debug for LyapunovWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LyapunovWeights({}, eps = {})", self.name, self.epsilon)
    }
}

impl LyapunovWeights {
    pub fn new(
        name: impl Into<String>,
        phi: impl Fn(Size) -> f64 + Send + Sync + 'static,
        psi: impl Fn(Size) -> f64 + Send + Sync + 'static,
        epsilon: f64,
    ) -> Self {
        Self {
            name: name.into(),
            phi: Arc::new(phi),
            psi: Arc::new(psi),
            epsilon,
        }
    }

    /// `phi_j = j^a`, `psi_j = j^-a`, `eps = 1 - 2^-a`.
    pub fn power(alpha: f64) -> Self {
        Self::new(
            format!("power:{alpha}"),
            move |j| (j as f64).powf(alpha),
            move |j| (j as f64).powf(-alpha),
            1.0 - 2f64.powf(-alpha),
        )
    }

    /// `phi_j = ln(j+1)^(1+a)`, `psi_j = ln(j+1)^-a`,
    /// `eps = a 2^(-1-a) ln(3/2)`.
    pub fn log_power(alpha: f64) -> Self {
        Self::new(
            format!("log-power:{alpha}"),
            move |j| ((j + 1) as f64).ln().powf(1.0 + alpha),
            move |j| ((j + 1) as f64).ln().powf(-alpha),
            alpha * 2f64.powf(-1.0 - alpha) * 1.5f64.ln(),
        )
    }

    /// Checks monotonicity and both inequalities on all pairs
    /// `1 <= i <= j <= cutoff`.
    pub fn check(&self, k: &Kernel, cutoff: Size) -> HypothesisCheck {
        let mut c = HypothesisCheck {
            cutoff,
            pairs: 0,
            kernel_margin: f64::INFINITY,
            epsilon_margin: f64::INFINITY,
            monotone: true,
            first_failure: None,
        };
        for i in 1..2 * cutoff {
            if (self.phi)(i + 1) < (self.phi)(i) || (self.psi)(i + 1) > (self.psi)(i) || (self.psi)(i) < 0.0 {
                c.monotone = false;
            }
        }
        for i in 1..=cutoff {
            let phi_i = (self.phi)(i);
            for j in i..=cutoff {
                c.pairs += 1;
                let km = k.eval(i, j) - phi_i;
                let em = phi_i * ((self.psi)(i) - (self.psi)(i + j)) - self.epsilon;
                // both inequalities can hold with equality; allow rounding
                let bad = km < -ROUNDING * phi_i.abs() || em < -ROUNDING * self.epsilon;
                if bad && c.first_failure.is_none() {
                    c.first_failure = Some((i, j));
                }
                c.kernel_margin = c.kernel_margin.min(km);
                c.epsilon_margin = c.epsilon_margin.min(em);
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub cutoff: Size,
    pub pairs: u64,
    /// `min (K(i,j) - phi_i)`.
    pub kernel_margin: f64,
    /// `min (phi_i (psi_i - psi_{i+j}) - eps)`.
    pub epsilon_margin: f64,
    pub monotone: bool,
    pub first_failure: Option<(Size, Size)>,
}

impl HypothesisCheck {
    pub fn passed(&self) -> bool {
        self.monotone && self.first_failure.is_none()
    }
}

/// One vanishing time against the lower bound for logarithmic kernels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchBound {
    pub i: Size,
    pub t_i: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalExistenceEvidence {
    pub a0: f64,
    pub m0_initial: f64,
    pub switch_times: Vec<f64>,
    pub checks: Vec<SwitchBound>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteTimeEvidence {
    pub weights: String,
    pub epsilon: f64,
    pub hypothesis: HypothesisCheck,
    /// `M_psi(0) / (eps M_0(0))`.
    pub bound: f64,
    pub switch_times: Vec<f64>,
    /// `(i, s_1 + ... + s_i)`.
    pub partial_sums: Vec<(Size, f64)>,
    /// `(M_psi / M_0)(t_i) + eps t_i`, which cannot exceed its initial value.
    pub lyapunov: Vec<(Size, f64)>,
    pub t_inf_extrapolation: Option<f64>,
    pub passed: bool,
}

/// Numerical evidence about `t_inf`. Neither variant is a proof: both only
/// report inequalities checked on the computed vanishing times.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "evidence", rename_all = "snake_case")]
pub enum BlowupEvidence {
    GrowsUnbounded(GlobalExistenceEvidence),
    TInfFinite(FiniteTimeEvidence),
}

impl BlowupEvidence {
    pub fn passed(&self) -> bool {
        match self {
            BlowupEvidence::GrowsUnbounded(e) => e.passed,
            BlowupEvidence::TInfFinite(e) => e.passed,
        }
    }
}

/// Sizes on which the weight hypothesis is sampled.
const HYPOTHESIS_CUTOFF: Size = 256;

/// Solves to minimal size `max_i` and checks the blow-up inequalities:
/// the growth bound for `min-log` kernels, the weighted bound on
/// `sum s_i` for every other kernel (which then needs `weights`).
pub fn blowup_classify(
    k: &Kernel,
    x0: &[f64],
    max_i: Size,
    controls: &SolverControls,
    weights: Option<&LyapunovWeights>,
) -> Result<BlowupEvidence> {
    if max_i < 2 {
        return Err(Error::InvalidParameter("need at least two vanishing times".into()));
    }
    let slow = match k.phi() {
        Some(Phi::Log { a0 }) => Some(*a0),
        _ => None,
    };
    if slow.is_none() && weights.is_none() {
        return Err(Error::MissingWeights);
    }
    let sol = integrate_piecewise(x0, k, PiecewiseStop::min_size(max_i), controls)?;
    let m0 = moment(&sol.initial, |_| 1.0);
    let times = sol.switch_times.clone();

    if let Some(a0) = slow {
        let mut checks = Vec::new();
        let mut acc = CompensatedSum::new();
        for i in 1..=times.len() as Size {
            let t_i = times[i as usize - 1];
            let li = ((i + 1) as f64).ln();
            if i >= 2 {
                let bound = 4.0 * a0 * (i as f64).ln() / li + acc.value() / li + 4.0 * a0 * m0.ln() / li;
                checks.push(SwitchBound {
                    i,
                    t_i,
                    bound,
                    passed: t_i >= bound,
                });
            }
            acc.add((((i + 2) as f64) / ((i + 1) as f64)).ln() * t_i);
        }
        return Ok(BlowupEvidence::GrowsUnbounded(GlobalExistenceEvidence {
            a0,
            m0_initial: m0,
            passed: checks.iter().all(|c| c.passed),
            switch_times: times,
            checks,
        }));
    }

    let w = weights.expect("checked above");
    let hypothesis = w.check(k, HYPOTHESIS_CUTOFF);
    let ratio0 = moment(&sol.initial, |j| (w.psi)(j)) / m0;
    let bound = ratio0 / w.epsilon;
    let mut partial_sums = Vec::with_capacity(times.len());
    let mut lyapunov = Vec::with_capacity(times.len());
    let mut sum = CompensatedSum::new();
    for (idx, (s, state)) in sol.durations.iter().zip(&sol.switch_states).enumerate() {
        let i = idx as Size + 1;
        sum.add(*s);
        partial_sums.push((i, sum.value()));
        let ratio = moment(state, |j| (w.psi)(j)) / moment(state, |_| 1.0);
        lyapunov.push((i, ratio + w.epsilon * state.t));
    }
    let tol = controls.tol_event.max(controls.tol_mass);
    let passed = hypothesis.passed()
        && partial_sums.iter().all(|p| p.1 <= bound)
        && lyapunov.iter().all(|l| l.1 <= ratio0 + tol);
    Ok(BlowupEvidence::TInfFinite(FiniteTimeEvidence {
        weights: w.name.clone(),
        epsilon: w.epsilon,
        hypothesis,
        bound,
        t_inf_extrapolation: sol.t_inf_extrapolation(),
        switch_times: times,
        partial_sums,
        lyapunov,
        passed,
    }))
}
