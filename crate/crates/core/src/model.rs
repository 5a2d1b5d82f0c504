//! Particle configurations, coagulation kernels and structural checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Particle size (positive integer).
pub type Size = u64;

/// Sparse real-valued sequence indexed by size.
pub type SparseVec = BTreeMap<Size, f64>;

/// Stochastic configuration: number of particles of each size.
///
/// Zero counts are never stored, and the first moment (total mass) and the
/// particle number are cached and kept exact.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ParticleState {
    counts: BTreeMap<Size, u64>,
    total_mass: u64,
    total_count: u64,
}

impl ParticleState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from `(size, count)` pairs; zero counts are skipped and
    /// repeated sizes accumulate.
    pub fn from_counts<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Size, u64)>,
    {
        let mut s = Self::new();
        for (size, count) in pairs {
            s.add(size, count)?;
        }
        Ok(s)
    }

    /// `count` particles of a single size.
    pub fn monodisperse(size: Size, count: u64) -> Result<Self> {
        Self::from_counts([(size, count)])
    }

    pub fn counts(&self) -> &BTreeMap<Size, u64> {
        &self.counts
    }

    pub fn count(&self, size: Size) -> u64 {
        self.counts.get(&size).copied().unwrap_or(0)
    }

    pub fn total_mass(&self) -> u64 {
        self.total_mass
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn is_empty(&self) -> bool {
        self.total_count == 0
    }

    /// Number of distinct sizes present.
    pub fn support_len(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Size, u64)> + '_ {
        self.counts.iter().map(|(&s, &c)| (s, c))
    }

    pub fn max_size(&self) -> Option<Size> {
        self.counts.keys().next_back().copied()
    }

    /// Smallest size with a positive count.
    pub fn min_size(&self) -> Result<Size> {
        self.counts.keys().next().copied().ok_or(Error::EmptyState)
    }

    pub fn add(&mut self, size: Size, count: u64) -> Result<()> {
        if size == 0 {
            return Err(Error::ZeroSize);
        }
        if count == 0 {
            return Ok(());
        }
        let mass = size
            .checked_mul(count)
            .and_then(|m| m.checked_add(self.total_mass))
            .ok_or(Error::MassOverflow)?;
        self.total_mass = mass;
        self.total_count += count;
        *self.counts.entry(size).or_insert(0) += count;
        Ok(())
    }

    /// Removes `count` particles of `size`.
    pub fn remove(&mut self, size: Size, count: u64) -> Result<()> {
        let have = self.count(size);
        if have < count {
            return Err(Error::InvalidParameter(format!(
                "cannot remove {count} particle(s) of size {size}: only {have} present"
            )));
        }
        if have == count {
            self.counts.remove(&size);
        } else {
            self.counts.insert(size, have - count);
        }
        self.total_count -= count;
        self.total_mass -= size * count;
        Ok(())
    }

    /// Merges one particle of size `a` with one particle of size `b`.
    pub fn merge(&mut self, a: Size, b: Size) -> Result<()> {
        let sum = a.checked_add(b).ok_or(Error::MassOverflow)?;
        if a == b {
            if self.count(a) < 2 {
                return Err(Error::InvalidParameter(format!(
                    "merge needs two particles of size {a}"
                )));
            }
            self.remove(a, 2)?;
        } else {
            if self.count(a) == 0 || self.count(b) == 0 {
                return Err(Error::InvalidParameter(format!(
                    "merge needs particles of sizes {a} and {b}"
                )));
            }
            self.remove(a, 1)?;
            self.remove(b, 1)?;
        }
        self.add(sum, 1)
    }

    /// Size of the `k`-th smallest particle (1-based).
    pub fn kth_smallest(&self, k: u64) -> Option<Size> {
        if k == 0 || k > self.total_count {
            return None;
        }
        let mut seen = 0;
        for (&s, &c) in &self.counts {
            seen += c;
            if seen >= k {
                return Some(s);
            }
        }
        None
    }

    /// Sizes of all particles in non-decreasing order.
    pub fn sorted_sizes(&self) -> Result<SortedSizes> {
        if self.is_empty() {
            return Err(Error::EmptyState);
        }
        let mut v = Vec::with_capacity(self.total_count as usize);
        for (&s, &c) in &self.counts {
            v.extend(std::iter::repeat_n(s, c as usize));
        }
        Ok(SortedSizes(v))
    }

    /// The rescaled configuration `X / scale`.
    pub fn rescaled(&self, scale: f64) -> SparseVec {
        self.counts
            .iter()
            .map(|(&s, &c)| (s, c as f64 / scale))
            .collect()
    }

    /// Recomputes both cached totals from the map.
    pub fn is_consistent(&self) -> bool {
        let mut mass: u128 = 0;
        let mut count: u128 = 0;
        for (&s, &c) in &self.counts {
            if c == 0 || s == 0 {
                return false;
            }
            mass += s as u128 * c as u128;
            count += c as u128;
        }
        mass == self.total_mass as u128 && count == self.total_count as u128
    }
}

impl fmt::Display for ParticleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (s, c)) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{s}:{c}")?;
        }
        write!(f, "}}")
    }
}

/// Particle sizes sorted in non-decreasing order: `S_1 <= S_2 <= ... <= S_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SortedSizes(pub Vec<Size>);

impl SortedSizes {
    pub fn as_slice(&self) -> &[Size] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `S_m` with 1-based `m`.
    pub fn get(&self, m: usize) -> Option<Size> {
        m.checked_sub(1).and_then(|i| self.0.get(i)).copied()
    }
}

/// First 1-based index `m` with `S_m(lower) > S_m(upper)`, or `None` when
/// `lower` is dominated entry-wise by `upper`. Both states must hold the same
/// number of particles; a count mismatch is reported at index 0.
pub fn first_dominance_violation(lower: &ParticleState, upper: &ParticleState) -> Option<usize> {
    if lower.total_count() != upper.total_count() {
        return Some(0);
    }
    let mut a = lower.iter();
    let mut b = upper.iter();
    let (mut ca, mut cb) = (a.next(), b.next());
    let mut index = 1usize;
    while let (Some((sa, na)), Some((sb, nb))) = (ca, cb) {
        if sa > sb {
            return Some(index);
        }
        let step = na.min(nb);
        index += step as usize;
        ca = if na == step { a.next() } else { Some((sa, na - step)) };
        cb = if nb == step { b.next() } else { Some((sb, nb - step)) };
    }
    None
}

/// Non-decreasing positive rate function `phi` of a min-form kernel
/// `K(i,j) = min(phi(i), phi(j))`. Evaluates on real arguments so it can be
/// used in integral-type bounds.
#[derive(Clone)]
pub enum Phi {
    /// `phi = c`.
    Const(f64),
    /// `phi(x) = x^a`.
    Power(f64),
    /// `phi(x) = ln(x + 1) / (4 a0)`.
    Log { a0: f64 },
    /// `phi(x) = a0 ln(x + 1)^(1 + alpha)`.
    LogPow { a0: f64, alpha: f64 },
    Table(PhiTable),
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phi::Const(c) => write!(f, "Const({c})"),
            Phi::Power(a) => write!(f, "Power({a})"),
            Phi::Log { a0 } => write!(f, "Log {{ a0: {a0} }}"),
            Phi::LogPow { a0, alpha } => write!(f, "LogPow {{ a0: {a0}, alpha: {alpha} }}"),
            Phi::Table(t) => write!(f, "Table({} points)", t.sizes.len()),
            Phi::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Which closed-form rule decides summability of `sum 1/(i phi(i))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesClass {
    Summable,
    Divergent,
    Inconclusive,
}

impl Phi {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Phi::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Phi::Const(c) => *c,
            Phi::Power(a) => x.powf(*a),
            Phi::Log { a0 } => (x + 1.0).ln() / (4.0 * a0),
            Phi::LogPow { a0, alpha } => a0 * (x + 1.0).ln().powf(1.0 + alpha),
            Phi::Table(t) => t.eval(x),
            Phi::Custom { f, .. } => f(x),
        }
    }

    pub fn at(&self, i: Size) -> f64 {
        self.eval(i as f64)
    }

    /// Summability of `sum 1/(i phi(i))` for the recognised families.
    pub fn series_class(&self) -> SeriesClass {
        match self {
            Phi::Const(_) => SeriesClass::Divergent,
            Phi::Power(a) if *a > 0.0 => SeriesClass::Summable,
            Phi::Power(_) => SeriesClass::Divergent,
            Phi::Log { .. } => SeriesClass::Divergent,
            Phi::LogPow { alpha, .. } if *alpha > 0.0 => SeriesClass::Summable,
            Phi::LogPow { .. } => SeriesClass::Divergent,
            Phi::Table(_) | Phi::Custom { .. } => SeriesClass::Inconclusive,
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            Phi::Const(c) => Some(*c),
            Phi::Power(a) if *a == 0.0 => Some(1.0),
            _ => None,
        }
    }

    /// `sup_m phi(m) / m^2`, the smallest `kappa` with `K(i,j) <= kappa i j`.
    fn kappa(&self) -> Option<f64> {
        match self {
            Phi::Const(c) => Some(*c),
            Phi::Power(a) if *a <= 2.0 => Some(1.0),
            Phi::Power(_) => None,
            Phi::Log { a0 } => Some(2f64.ln() / (4.0 * a0)),
            Phi::LogPow { .. } | Phi::Table(_) => {
                let mut best: f64 = 0.0;
                for m in 1..=100_000u64 {
                    let mf = m as f64;
                    best = best.max(self.eval(mf) / (mf * mf));
                }
                Some(best)
            }
            Phi::Custom { .. } => None,
        }
    }
}

/// Tabulated `phi`, interpolated linearly in `ln(size)` and held constant
/// outside the tabulated range.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    sizes: Vec<f64>,
    values: Vec<f64>,
}

impl PhiTable {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty phi table".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in points.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidParameter(format!(
                    "duplicate size {} in phi table",
                    w[0].0
                )));
            }
        }
        if points.iter().any(|p| !(p.0 >= 1.0) || !(p.1 > 0.0) || !p.1.is_finite()) {
            return Err(Error::InvalidParameter(
                "phi table needs sizes >= 1 and positive finite values".into(),
            ));
        }
        Ok(Self {
            sizes: points.iter().map(|p| p.0).collect(),
            values: points.iter().map(|p| p.1).collect(),
        })
    }

    /// Reads a two-column `size,value` CSV; a non-numeric first row is
    /// treated as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let pts = read_two_column_csv(path)?;
        Self::new(pts)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.sizes.len();
        if x <= self.sizes[0] {
            return self.values[0];
        }
        if x >= self.sizes[n - 1] {
            return self.values[n - 1];
        }
        let k = self.sizes.partition_point(|&s| s <= x) - 1;
        let (s0, s1) = (self.sizes[k].ln(), self.sizes[k + 1].ln());
        let w = (x.ln() - s0) / (s1 - s0);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }
}

pub(crate) fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                token: rec.iter().collect::<Vec<_>>().join(","),
                reason: "expected two columns size,value".into(),
            });
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(a), Ok(b)) => out.push((a, b)),
            _ if row == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    token: format!("{},{}", &rec[0], &rec[1]),
                    reason: "non-numeric entry".into(),
                })
            }
        }
    }
    Ok(out)
}

type RateFn = Arc<dyn Fn(Size, Size) -> f64 + Send + Sync>;
type BoundFn = Arc<dyn Fn(Size) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Rate {
    Min(Phi),
    General(RateFn),
}

/// Whether a kernel has the min form `min(phi(i), phi(j))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Generic,
    MinForm,
}

/// Declared bounds on a kernel. All optional; they are checked by sampling.
#[derive(Clone, Default)]
pub struct KernelBounds {
    /// `K(i,j) <= kappa i j`.
    pub kappa: Option<f64>,
    /// `K(i,j) <= kappa_i(i)` for `j >= i`.
    pub kappa_i: Option<BoundFn>,
    /// `K(i,j) >= delta_i(i) > 0` for `j >= i`.
    pub delta_i: Option<BoundFn>,
}

/// Symmetric coagulation kernel with optional bound metadata.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    rate: Rate,
    bounds: KernelBounds,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("kind", &self.kind())
            .field("phi", &self.phi())
            .field("kappa", &self.bounds.kappa)
            .field("has_kappa_i", &self.bounds.kappa_i.is_some())
            .field("has_delta_i", &self.bounds.delta_i.is_some())
            .finish()
    }
}

impl Kernel {
    /// Min-form kernel. `delta_i` and `kappa_i` are both `phi(i)`.
    pub fn min_form(name: impl Into<String>, phi: Phi) -> Self {
        let kappa = phi.kappa();
        let p1 = phi.clone();
        let p2 = phi.clone();
        Self {
            name: name.into(),
            rate: Rate::Min(phi),
            bounds: KernelBounds {
                kappa,
                kappa_i: Some(Arc::new(move |i| p1.at(i))),
                delta_i: Some(Arc::new(move |i| p2.at(i))),
            },
        }
    }

    /// `K = c`, treated as the min form with constant `phi`.
    pub fn constant(c: f64) -> Self {
        Self::min_form(format!("const:{c}"), Phi::Const(c))
    }

    /// `K(i,j) = min(i,j)^a`.
    pub fn min_pow(a: f64) -> Self {
        Self::min_form(format!("min-pow:{a}"), Phi::Power(a))
    }

    /// `K(i,j) = min(ln(i+1), ln(j+1)) / (4 a0)`.
    pub fn min_log(a0: f64) -> Self {
        Self::min_form(format!("min-log:{a0}"), Phi::Log { a0 })
    }

    /// `K(i,j) = a0 min(ln(i+1), ln(j+1))^(1+alpha)`.
    pub fn min_logpow(a0: f64, alpha: f64) -> Self {
        Self::min_form(format!("min-logpow:{a0},{alpha}"), Phi::LogPow { a0, alpha })
    }

    /// Arbitrary rate function without declared bounds.
    pub fn general(
        name: impl Into<String>,
        f: impl Fn(Size, Size) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            rate: Rate::General(Arc::new(f)),
            bounds: KernelBounds::default(),
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.bounds.kappa = Some(kappa);
        self
    }

    pub fn with_kappa_i(mut self, f: impl Fn(Size) -> f64 + Send + Sync + 'static) -> Self {
        self.bounds.kappa_i = Some(Arc::new(f));
        self
    }

    pub fn with_delta_i(mut self, f: impl Fn(Size) -> f64 + Send + Sync + 'static) -> Self {
        self.bounds.delta_i = Some(Arc::new(f));
        self
    }

    pub fn without_delta(mut self) -> Self {
        self.bounds.delta_i = None;
        self
    }

    /// Parses a preset: `const:c`, `min-pow:a`, `min-log:A0`,
    /// `min-logpow:a0,alpha` or `min-table:<csv path>`.
    pub fn from_preset(spec: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Parse {
            token: spec.to_string(),
            reason: reason.to_string(),
        };
        let (head, arg) = spec.split_once(':').ok_or_else(|| bad("expected <preset>:<args>"))?;
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
                token: s.to_string(),
                reason: "expected a number".into(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("non-finite parameter"))
            }
        };
        let k = match head {
            "const" => {
                let c = num(arg)?;
                if c <= 0.0 {
                    return Err(bad("constant must be positive"));
                }
                Kernel::constant(c)
            }
            "min-pow" => {
                let a = num(arg)?;
                if a < 0.0 {
                    return Err(bad("exponent must be nonnegative"));
                }
                Kernel::min_pow(a)
            }
            "min-log" => {
                let a0 = num(arg)?;
                if a0 <= 0.0 {
                    return Err(bad("A0 must be positive"));
                }
                Kernel::min_log(a0)
            }
            "min-logpow" => {
                let (a, b) = arg.split_once(',').ok_or_else(|| bad("expected a0,alpha"))?;
                let (a0, alpha) = (num(a)?, num(b)?);
                if a0 <= 0.0 || alpha < 0.0 {
                    return Err(bad("need a0 > 0 and alpha >= 0"));
                }
                Kernel::min_logpow(a0, alpha)
            }
            "min-table" => {
                let table = PhiTable::from_csv(Path::new(arg))?;
                Kernel::min_form(spec.to_string(), Phi::Table(table))
            }
            _ => return Err(bad("unknown kernel preset")),
        };
        Ok(k.renamed(spec))
    }

    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> KernelKind {
        match self.rate {
            Rate::Min(_) => KernelKind::MinForm,
            Rate::General(_) => KernelKind::Generic,
        }
    }

    pub fn is_min_form(&self) -> bool {
        self.kind() == KernelKind::MinForm
    }

    pub fn phi(&self) -> Option<&Phi> {
        match &self.rate {
            Rate::Min(p) => Some(p),
            Rate::General(_) => None,
        }
    }

    pub fn bounds(&self) -> &KernelBounds {
        &self.bounds
    }

    pub fn eval(&self, i: Size, j: Size) -> f64 {
        match &self.rate {
            Rate::Min(phi) => phi.at(i).min(phi.at(j)),
            Rate::General(f) => f(i, j),
        }
    }

    pub fn kappa_i(&self, i: Size) -> Option<f64> {
        self.bounds.kappa_i.as_ref().map(|f| f(i))
    }

    pub fn delta_i(&self, i: Size) -> Option<f64> {
        self.bounds.delta_i.as_ref().map(|f| f(i))
    }
}

/// One failed structural check.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Asymmetric { i: Size, j: Size, kij: f64, kji: f64 },
    Negative { i: Size, j: Size, value: f64 },
    KappaBound { i: Size, j: Size, value: f64, bound: f64 },
    KappaIBound { i: Size, j: Size, value: f64, bound: f64 },
    DeltaIBound { i: Size, j: Size, value: f64, bound: f64 },
    NonMonotonePhi { i: Size, phi_i: f64, phi_next: f64 },
    MinFormMismatch { i: Size, j: Size, value: f64, expected: f64 },
}

/// Findings of [`validate_kernel`]. An empty violation list means the kernel
/// is consistent with its declared properties up to the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub kernel: String,
    pub cutoff: Size,
    pub violations: Vec<Violation>,
    pub violation_count: usize,
    /// `max_{i <= cutoff} kappa_i / i` when `kappa_i` is declared.
    pub kappa_infinity: Option<f64>,
}

impl ValidationReport {
    pub fn is_consistent(&self) -> bool {
        self.violation_count == 0
    }
}

const MAX_REPORTED: usize = 1000;
const REL_SLACK: f64 = 1e-12;

fn exceeds(value: f64, bound: f64) -> bool {
    value > bound + REL_SLACK * bound.abs().max(1.0)
}

/// Checks symmetry, declared bounds and min-form structure on every pair
/// `i, j <= cutoff`.
pub fn validate_kernel(k: &Kernel, cutoff: Size) -> Result<ValidationReport> {
    if cutoff < 2 {
        return Err(Error::InvalidParameter("size_cutoff must be >= 2".into()));
    }
    let mut found = Vec::new();
    let mut count = 0usize;
    let mut push = |v: Violation| {
        count += 1;
        if found.len() < MAX_REPORTED {
            found.push(v);
        }
    };
    let b = k.bounds();
    for i in 1..=cutoff {
        for j in i..=cutoff {
            let kij = k.eval(i, j);
            let kji = k.eval(j, i);
            if kij != kji {
                push(Violation::Asymmetric { i, j, kij, kji });
            }
            if !(kij >= 0.0) {
                push(Violation::Negative { i, j, value: kij });
            }
            if let Some(kappa) = b.kappa {
                let bound = kappa * i as f64 * j as f64;
                if exceeds(kij, bound) {
                    push(Violation::KappaBound { i, j, value: kij, bound });
                }
            }
            if let Some(ki) = k.kappa_i(i) {
                if exceeds(kij, ki) {
                    push(Violation::KappaIBound { i, j, value: kij, bound: ki });
                }
            }
            if let Some(di) = k.delta_i(i) {
                if exceeds(di, kij) || !(di > 0.0) {
                    push(Violation::DeltaIBound { i, j, value: kij, bound: di });
                }
            }
            if let Some(phi) = k.phi() {
                let expected = phi.at(i.min(j));
                if exceeds(kij, expected) || exceeds(expected, kij) {
                    push(Violation::MinFormMismatch { i, j, value: kij, expected });
                }
            }
        }
    }
    if let Some(phi) = k.phi() {
        for i in 1..cutoff {
            let (a, b) = (phi.at(i), phi.at(i + 1));
            if !(b >= a) {
                push(Violation::NonMonotonePhi { i, phi_i: a, phi_next: b });
            }
        }
    }
    let kappa_infinity = b.kappa_i.as_ref().map(|f| {
        (1..=cutoff)
            .map(|i| f(i) / i as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(ValidationReport {
        kernel: k.name().to_string(),
        cutoff,
        violations: found,
        violation_count: count,
        kappa_infinity,
    })
}

/// Rescales a nonnegative sequence (index 0 is size 1) to unit first moment.
/// Returns the normalised sequence and the original first moment.
pub fn normalize_initial(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    for (k, &v) in x.iter().enumerate() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::BadEntry { size: k as u64 + 1 });
        }
    }
    let scale: f64 = x.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v).sum();
    if !(scale > 0.0) {
        return Err(Error::ZeroMass);
    }
    if x.first().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::MissingSizeOne);
    }
    Ok((x.iter().map(|v| v / scale).collect(), scale))
}

/// `sum_j j x_j` for a dense sequence with index 0 = size 1.
pub fn first_moment(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v).sum()
}
