//! Command-line front end. Every subcommand writes its artifacts plus a
//! `manifest.json` into the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, ErrorClass, Result};
use crate::hydro::{convergence_experiment, discretize_initial, ConvergenceConfig};
use crate::lifespan::{blowup_classify, dichotomy_scan, series_test, LyapunovWeights};
use crate::model::{normalize_initial, validate_kernel, Kernel, ParticleState, Size};
use crate::ode::{integrate_piecewise, write_dense_csv, write_sparse_dense_csv, write_switch_csv};
use crate::ode::{PiecewiseStop, SolverControls};
use crate::rng::{stream, StreamRole};
use crate::ssa::{coupled_simulate, simulate, write_trajectory_jsonl, StopRule};

#[derive(Debug, Parser)]
#[command(name = "mindriven", version, about = "Min-driven coalescence experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact stochastic trajectories as JSONL.
    Simulate(RunConfig),
    /// Piecewise hydrodynamic solve: switch times and dense output.
    Integrate(RunConfig),
    /// Stochastic-versus-deterministic convergence ensemble.
    Converge(RunConfig),
    /// Expected lifetimes, series test or blow-up evidence.
    Lifespan(RunConfig),
    /// Coupled runs of two ordered initial states.
    Couple(RunConfig),
    /// Kernel bounds on a finite size range.
    ValidateKernel(RunConfig),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Integrate(_) => "integrate",
            Command::Converge(_) => "converge",
            Command::Lifespan(_) => "lifespan",
            Command::Couple(_) => "couple",
            Command::ValidateKernel(_) => "validate-kernel",
        }
    }

    fn config(&self) -> &RunConfig {
        match self {
            Command::Simulate(c)
            | Command::Integrate(c)
            | Command::Converge(c)
            | Command::Lifespan(c)
            | Command::Couple(c)
            | Command::ValidateKernel(c) => c,
        }
    }
}

/// Options shared by all subcommands. The same keys are accepted in a JSON
/// file passed with `--config`; flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSON file with default values for any of the other options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Accepted in config files only; must match the subcommand.
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Kernel preset: const:c, min-pow:a, min-log:A0, min-logpow:a0,alpha, min-table:<csv>.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Initial data: e1, mono:<size>x<count>, 1:0.5,2:0.25 or a size,value CSV.
    #[arg(long)]
    pub x0: Option<String>,
    /// Second initial state for `couple`.
    #[arg(long)]
    pub y0: Option<String>,
    /// Total mass N (a list for `converge`).
    #[arg(long = "N", value_delimiter = ',')]
    #[serde(rename = "N")]
    pub mass: Option<Vec<u64>>,
    /// Particle numbers n for `lifespan`.
    #[arg(long = "n", value_delimiter = ',')]
    pub n: Option<Vec<u64>>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Time horizon.
    #[arg(long = "t", alias = "horizon")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// simulate: singleton, time:<t> or min-size:<i>.
    #[arg(long)]
    pub stop: Option<String>,
    /// Stop once the minimal size exceeds this value.
    #[arg(long)]
    pub max_min_size: Option<Size>,
    /// Truncation: sizes 1..=M are resolved.
    #[arg(long = "M", alias = "cap")]
    #[serde(rename = "M")]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub tol_event: Option<f64>,
    #[arg(long)]
    pub tol_mass: Option<f64>,
    #[arg(long)]
    pub tol_overflow: Option<f64>,
    /// lifespan: dichotomy, series or blowup.
    #[arg(long)]
    pub mode: Option<String>,
    /// lifespan blowup: power:<a> or log-power:<a>.
    #[arg(long)]
    pub weights: Option<String>,
    /// Size cutoff for validate-kernel and the series test.
    #[arg(long)]
    pub cutoff: Option<u64>,
    /// Sampling grid for the convergence distance.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Worker threads; falls back to MINDRIVEN_THREADS, then all cores.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Fills unset options from `file`.
    pub fn merged_with(self, file: RunConfig) -> Result<RunConfig> {
        let mut base = serde_json::to_value(file)?;
        let flags = serde_json::to_value(&self)?;
        if let (Value::Object(base), Value::Object(flags)) = (&mut base, flags) {
            for (k, v) in flags {
                if !v.is_null() {
                    base.insert(k, v);
                }
            }
        }
        let mut out: RunConfig = serde_json::from_value(base)?;
        out.config = self.config;
        out.threads = self.threads;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            token: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    fn kernel(&self) -> Result<Kernel> {
        Kernel::from_preset(self.kernel.as_deref().ok_or_else(|| missing("kernel"))?)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn controls(&self) -> Result<SolverControls> {
        let mut c = SolverControls::default();
        for (v, slot) in [
            (self.tol_event, &mut c.tol_event),
            (self.tol_mass, &mut c.tol_mass),
            (self.tol_overflow, &mut c.tol_overflow),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidParameter("tolerances must be positive".into()));
                }
                *slot = v;
            }
        }
        if let Some(m) = self.truncation {
            c.cap = m;
        }
        Ok(c)
    }

    fn initial(&self, key: &str) -> Result<InitialSpec> {
        let spec = match key {
            "y0" => self.y0.as_deref(),
            _ => self.x0.as_deref(),
        };
        parse_initial(spec.ok_or_else(|| missing(key))?)
    }

    fn single_mass(&self) -> Result<Option<u64>> {
        match self.mass.as_deref() {
            None => Ok(None),
            Some([n]) => Ok(Some(*n)),
            Some(_) => Err(Error::InvalidParameter("expected a single N".into())),
        }
    }
}

fn missing(key: &str) -> Error {
    Error::InvalidParameter(format!("missing required option {key}"))
}

/// Parsed initial data: nonnegative values indexed by size.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub entries: Vec<(Size, f64)>,
}

/// Sizes above this are rejected to keep dense vectors bounded.
const MAX_INITIAL_SIZE: Size = 1 << 24;

/// Parses `e1`, `mono:<size>x<count>`, `1:0.5,2:0.25` or a CSV file with
/// rows `size,value`.
pub fn parse_initial(spec: &str) -> Result<InitialSpec> {
    let spec = spec.trim();
    let bad = |token: &str, reason: &str| Error::Parse {
        token: token.to_string(),
        reason: reason.to_string(),
    };
    let size = |t: &str| -> Result<Size> {
        let s: Size = t.trim().parse().map_err(|_| bad(t, "expected a positive size"))?;
        if s == 0 || s > MAX_INITIAL_SIZE {
            return Err(bad(t, "size out of range"));
        }
        Ok(s)
    };
    let value = |t: &str| -> Result<f64> {
        let v: f64 = t.trim().parse().map_err(|_| bad(t, "expected a number"))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(bad(t, "values must be finite and nonnegative"));
        }
        Ok(v)
    };

    let mut entries = Vec::new();
    if spec == "e1" {
        entries.push((1, 1.0));
    } else if let Some(rest) = spec.strip_prefix("mono:") {
        let (s, c) = rest.split_once('x').ok_or_else(|| bad(rest, "expected <size>x<count>"))?;
        let count: u64 = c.trim().parse().map_err(|_| bad(c, "expected a count"))?;
        entries.push((size(s)?, count as f64));
    } else if spec.contains(':') {
        for tok in spec.split(',') {
            let (s, v) = tok.split_once(':').ok_or_else(|| bad(tok, "expected <size>:<value>"))?;
            entries.push((size(s)?, value(v)?));
        }
    } else {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(spec)
            .map_err(|e| bad(spec, &e.to_string()))?;
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let (s, v) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            if row == 0 && s.parse::<Size>().is_err() {
                continue; // header
            }
            entries.push((size(s)?, value(v)?));
        }
    }
    entries.sort_by_key(|e| e.0);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(bad(&w[0].0.to_string(), "size listed twice"));
    }
    if entries.iter().all(|e| e.1 == 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(InitialSpec { entries })
}

impl InitialSpec {
    /// Dense sequence scaled to unit first moment.
    pub fn density(&self) -> Result<Vec<f64>> {
        let len = self.entries.last().map_or(0, |e| e.0 as usize);
        let mut x = vec![0.0; len];
        for &(s, v) in &self.entries {
            x[s as usize - 1] = v;
        }
        Ok(normalize_initial(&x)?.0)
    }

    /// Integer particle state: the counts themselves when they are whole
    /// numbers and no mass is given, else the density discretised to mass `n`.
    pub fn state(&self, n: Option<u64>) -> Result<ParticleState> {
        let integral = self.entries.iter().all(|e| e.1.fract() == 0.0);
        match n {
            None if integral => {
                ParticleState::from_counts(self.entries.iter().filter(|e| e.1 > 0.0).map(|e| (e.0, e.1 as u64)))
            }
            None => Err(Error::InvalidParameter("fractional initial data needs --N".into())),
            Some(n) => Ok(discretize_initial(&self.density()?, n)?.state),
        }
    }
}

/// Parses the `simulate --stop` value.
pub fn parse_stop(spec: &str) -> Result<StopRule> {
    let bad = |reason: &str| Error::Parse {
        token: spec.to_string(),
        reason: reason.to_string(),
    };
    if spec == "singleton" {
        return Ok(StopRule::UntilSingleton);
    }
    match spec.split_once(':') {
        Some(("time", t)) => {
            let t: f64 = t.parse().map_err(|_| bad("expected time:<t>"))?;
            if !(t >= 0.0) {
                return Err(bad("time must be nonnegative"));
            }
            Ok(StopRule::UntilTime(t))
        }
        Some(("min-size", i)) => Ok(StopRule::UntilMinSizeAtLeast(
            i.parse().map_err(|_| bad("expected min-size:<i>"))?,
        )),
        _ => Err(bad("expected singleton, time:<t> or min-size:<i>")),
    }
}

/// Writes into the output directory and remembers what was written.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, v)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Runs one parsed command. Returns the summary printed on stdout.
pub fn run(command: &Command) -> Result<Value> {
    let started = Instant::now();
    let flags = command.config().clone();
    let cfg = match &flags.config {
        Some(path) => {
            let file = RunConfig::load(path)?;
            if let Some(c) = &file.command {
                if c != command.name() {
                    return Err(Error::InvalidParameter(format!(
                        "config is for `{c}`, not `{}`",
                        command.name()
                    )));
                }
            }
            flags.merged_with(file)?
        }
        None => flags,
    };
    let threads = cfg
        .threads
        .or_else(|| std::env::var("MINDRIVEN_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("mindriven-out"));
    fs::create_dir_all(&dir)?;
    let mut out = Artifacts {
        dir,
        written: Vec::new(),
    };
    let summary = pool.install(|| match command {
        Command::Simulate(_) => run_simulate(&cfg, &mut out),
        Command::Integrate(_) => run_integrate(&cfg, &mut out),
        Command::Converge(_) => run_converge(&cfg, &mut out),
        Command::Lifespan(_) => run_lifespan(&cfg, &mut out),
        Command::Couple(_) => run_couple(&cfg, &mut out),
        Command::ValidateKernel(_) => run_validate(&cfg, &mut out),
    })?;

    let mut artifacts = out.written.clone();
    artifacts.push("manifest.json".into());
    // the stored config can be passed back with --config
    let mut rerun = cfg.clone();
    rerun.command = Some(command.name().to_string());
    let manifest = json!({
        "command": command.name(),
        "config": rerun,
        "seed": cfg.seed(),
        "version": env!("CARGO_PKG_VERSION"),
        "threads": pool.current_num_threads(),
        "artifacts": artifacts,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    out.json("manifest.json", &manifest)?;
    Ok(summary)
}

fn run_simulate(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let k = cfg.kernel()?;
    let x0 = cfg.initial("x0")?.state(cfg.single_mass()?)?;
    let stop = parse_stop(cfg.stop.as_deref().unwrap_or("singleton"))?;
    let replicas = cfg.replicas.unwrap_or(1);
    let seed = cfg.seed();
    let mut runs = Vec::new();
    for r in 0..replicas {
        let traj = simulate(&x0, &k, stop, &mut stream(seed, r, StreamRole::Simulation))?;
        let mut w = out.create(&format!("trajectory_{r}.jsonl"))?;
        write_trajectory_jsonl(&mut w, &traj, seed, k.name())?;
        w.flush()?;
        runs.push(json!({
            "replica": r,
            "events": traj.events.len(),
            "t_last": traj.t_last,
            "final_min_size": traj.final_state.min_size().ok(),
            "stop_reached": traj.stop_reached,
        }));
    }
    let summary = json!({ "kernel": k.name(), "initial_mass": x0.total_mass(), "runs": runs });
    out.json("simulate.json", &summary)?;
    Ok(summary)
}

/// Above this truncation the dense CSV switches to the sparse layout.
const DENSE_CSV_MAX_COLUMNS: usize = 256;

fn run_integrate(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let k = cfg.kernel()?;
    let x0 = cfg.initial("x0")?.density()?;
    let stop = PiecewiseStop {
        max_min_size: cfg.max_min_size,
        max_time: cfg.horizon,
    };
    let controls = cfg.controls()?;
    let sol = integrate_piecewise(&x0, &k, stop, &controls)?;

    let mut w = out.create("switch_times.csv")?;
    write_switch_csv(&mut w, &sol)?;
    w.flush()?;
    let mut w = out.create("dense.csv")?;
    if controls.cap <= DENSE_CSV_MAX_COLUMNS {
        write_dense_csv(&mut w, &sol)?;
    } else {
        write_sparse_dense_csv(&mut w, &sol)?;
    }
    w.flush()?;

    let summary = json!({
        "kernel": k.name(),
        "cap": controls.cap,
        "switch_times": sol.switch_times,
        "skipped": sol.skipped,
        "coverage": sol.coverage(),
        "overflow_mass": sol.final_state.overflow_mass,
        "clamps": sol.clamps,
        "max_mass_drift": sol.max_mass_drift,
        "t_inf_partial": sol.t_inf_partial(),
        "t_inf_extrapolation_heuristic": sol.t_inf_extrapolation(),
    });
    out.json("integrate.json", &summary)?;
    Ok(summary)
}

fn run_converge(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let k = cfg.kernel()?;
    let x0 = cfg.initial("x0")?.density()?;
    let mut ens = ConvergenceConfig::new(
        cfg.horizon.ok_or_else(|| missing("t"))?,
        cfg.mass.clone().ok_or_else(|| missing("N"))?,
        cfg.replicas.unwrap_or(20),
        cfg.seed(),
    );
    if let Some(g) = cfg.grid {
        ens.grid = g;
    }
    let run = convergence_experiment(&x0, &k, &ens, &cfg.controls()?)?;
    let mut w = out.create("errors.csv")?;
    run.write_errors_csv(&mut w)?;
    w.flush()?;
    let mut w = out.create("summary.csv")?;
    run.write_summary_csv(&mut w)?;
    w.flush()?;
    let summary = run.summary_json();
    out.json("summary.json", &summary)?;
    Ok(json!({ "fitted_slope": run.fitted_slope, "summaries": run.summaries }))
}

/// Parses `power:<a>` or `log-power:<a>`.
pub fn parse_weights(spec: &str) -> Result<LyapunovWeights> {
    let bad = || Error::Parse {
        token: spec.to_string(),
        reason: "expected power:<a> or log-power:<a> with a > 0".into(),
    };
    let (head, a) = spec.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.parse().map_err(|_| bad())?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(bad());
    }
    match head {
        "power" => Ok(LyapunovWeights::power(a)),
        "log-power" => Ok(LyapunovWeights::log_power(a)),
        _ => Err(bad()),
    }
}

fn run_lifespan(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let k = cfg.kernel()?;
    match cfg.mode.as_deref().unwrap_or("dichotomy") {
        "dichotomy" => {
            let ladder = cfg.n.clone().ok_or_else(|| missing("n"))?;
            let replicas = cfg.replicas.unwrap_or(1000) as usize;
            let rep = dichotomy_scan(&k, &ladder, replicas, cfg.seed())?;
            out.json("dichotomy.json", &rep)?;
            let mut w = out.create("dichotomy.csv")?;
            rep.write_csv(&mut w)?;
            w.flush()?;
            Ok(json!({
                "classification": rep.classification,
                "plateau": rep.plateau,
                "growing": rep.growing,
                "consistent": rep.consistent(),
            }))
        }
        "series" => {
            let phi = k.phi().ok_or(Error::NotMinForm)?;
            let s = series_test(phi, cfg.cutoff.unwrap_or(100_000))?;
            out.json("series.json", &s)?;
            Ok(json!({ "classification": s.classification, "partial_sum": s.last() }))
        }
        "blowup" => {
            let x0 = cfg.initial("x0")?.density()?;
            let max_i = cfg.max_min_size.ok_or_else(|| missing("max-min-size"))?;
            let weights = cfg.weights.as_deref().map(parse_weights).transpose()?;
            let mut controls = cfg.controls()?;
            controls.dense_output = false;
            let e = blowup_classify(&k, &x0, max_i, &controls, weights.as_ref())?;
            out.json("blowup.json", &e)?;
            Ok(json!({ "evidence": e, "passed": e.passed() }))
        }
        m => Err(Error::InvalidParameter(format!("unknown lifespan mode {m}"))),
    }
}

fn run_couple(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let k = cfg.kernel()?;
    let phi = k.phi().ok_or(Error::NotMinForm)?;
    let n = cfg.single_mass()?;
    let x0 = cfg.initial("x0")?.state(n)?;
    let y0 = cfg.initial("y0")?.state(n)?;
    let replicas = cfg.replicas.unwrap_or(1000);
    let seed = cfg.seed();
    let mut w = csv::Writer::from_writer(out.create("couple.csv")?);
    w.write_record(["replica", "T_x", "T_y", "ordered"])?;
    let mut ordered = 0u64;
    for r in 0..replicas {
        let run = coupled_simulate(&x0, &y0, phi, &mut stream(seed, r, StreamRole::Coupling))?;
        let (tx, ty) = (run.x.t_last.unwrap_or(0.0), run.y.t_last.unwrap_or(0.0));
        let ok = tx <= ty;
        ordered += ok as u64;
        w.write_record([r.to_string(), tx.to_string(), ty.to_string(), ok.to_string()])?;
    }
    w.flush()?;
    let summary = json!({ "kernel": k.name(), "runs": replicas, "ordered": ordered });
    out.json("couple.json", &summary)?;
    Ok(summary)
}

fn run_validate(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let k = cfg.kernel()?;
    let rep = validate_kernel(&k, cfg.cutoff.unwrap_or(256))?;
    out.json("validation.json", &rep)?;
    if !rep.is_consistent() {
        return Err(Error::InvalidParameter(format!(
            "kernel {} violates its declared bounds at {} pairs",
            k.name(),
            rep.violation_count
        )));
    }
    Ok(serde_json::to_value(&rep)?)
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::NumericalAbort => 3,
        ErrorClass::Precondition => 4,
    }
}

/// Single-line JSON diagnostic.
pub fn diagnostic(e: &Error) -> String {
    json!({ "error": e.tag(), "message": e.to_string(), "exit_code": exit_code(e) }).to_string()
}

/// Parses `args`, runs, prints and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let d = json!({ "error": "usage", "message": first, "exit_code": 2 });
            eprintln!("{d}");
            return 2;
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            exit_code(&e)
        }
    }
}
