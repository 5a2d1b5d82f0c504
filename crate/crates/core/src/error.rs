use thiserror::Error;

/// Errors raised by the simulation, solver and experiment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state holds no particles")]
    EmptyState,
    #[error("state holds {count} particle(s); no coalescence is possible")]
    TerminalState { count: u64 },
    #[error("total mass overflows u64")]
    MassOverflow,
    #[error("size must be positive")]
    ZeroSize,
    #[error("initial data has zero first moment")]
    ZeroMass,
    #[error("initial data has no size-1 mass (x_1 = 0)")]
    MissingSizeOne,
    #[error("initial data has a negative or non-finite entry at size {size}")]
    BadEntry { size: u64 },

    #[error("component {size} is nonzero below the minimal size {min_size}")]
    PrefixViolation { size: u64, min_size: u64 },
    #[error("minimal component did not vanish within the time budget (ell = {ell}, t = {t})")]
    NoCrossing { ell: u64, t: f64 },
    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("mass past the truncation cap ({overflow:e}) exceeds the budget {budget:e}")]
    TruncationOverflow { overflow: f64, budget: f64 },
    #[error("component {size} reached {value:e} at t = {t}, below the clamp tolerance")]
    NegativeComponent { size: u64, value: f64, t: f64 },
    #[error("first moment drifted by {drift:e} (tolerance {tol:e})")]
    MassDrift { drift: f64, tol: f64 },
    #[error("truncation cap {cap} is smaller than twice the target minimal size {target}")]
    CapTooSmall { cap: usize, target: u64 },
    #[error("state is within {h} of a switch time")]
    TooCloseToSwitch { h: f64 },
    #[error("kernel declares no lower bound delta_i")]
    MissingDelta,
    #[error("fast-kernel blow-up check needs Lyapunov weights")]
    MissingWeights,

    #[error("expected-event count lambda*h = {load} exceeds 0.2")]
    StepTooLarge { load: f64 },
    #[error("sorted-size dominance fails at index {index}")]
    DominanceViolation { index: usize },
    #[error("trajectory cannot be replayed from the representation: {reason}")]
    ReplayMismatch { reason: String },
    #[error("horizon {horizon} exceeds the solution coverage {coverage}")]
    HorizonExceedsSolution { horizon: f64, coverage: f64 },
    #[error("no discretisation reproduces x0 without size-1 mass at N = {n}")]
    Infeasible { n: u64 },

    #[error("kernel requires a min-form rate phi")]
    NotMinForm,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at `{token}`: {reason}")]
    Parse { token: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse grouping used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NumericalAbort,
    Precondition,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Parse { .. } | InvalidParameter(_) | Io(_) | ZeroMass | MissingSizeOne
            | BadEntry { .. } | ZeroSize => ErrorClass::Validation,
            TruncationOverflow { .. }
            | NegativeComponent { .. }
            | MassDrift { .. }
            | StepUnderflow { .. }
            | NoCrossing { .. }
            | MassOverflow => ErrorClass::NumericalAbort,
            _ => ErrorClass::Precondition,
        }
    }

    /// Short machine-readable tag.
    pub fn tag(&self) -> &'static str {
        use Error::*;
        match self {
            EmptyState => "empty_state",
            TerminalState { .. } => "terminal_state",
            MassOverflow => "mass_overflow",
            ZeroSize => "zero_size",
            ZeroMass => "zero_mass",
            MissingSizeOne => "missing_size_one",
            BadEntry { .. } => "bad_entry",
            PrefixViolation { .. } => "prefix_violation",
            NoCrossing { .. } => "no_crossing",
            StepUnderflow { .. } => "step_underflow",
            TruncationOverflow { .. } => "truncation_overflow",
            NegativeComponent { .. } => "negative_component",
            MassDrift { .. } => "mass_drift",
            CapTooSmall { .. } => "cap_too_small",
            TooCloseToSwitch { .. } => "too_close_to_switch",
            MissingDelta => "missing_delta",
            MissingWeights => "missing_weights",
            StepTooLarge { .. } => "h_too_large",
            DominanceViolation { .. } => "dominance_violation",
            ReplayMismatch { .. } => "replay_mismatch",
            HorizonExceedsSolution { .. } => "horizon_exceeds_solution",
            Infeasible { .. } => "infeasible",
            NotMinForm => "not_min_form",
            InvalidParameter(_) => "invalid_parameter",
            Parse { .. } => "parse",
            Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
