//! Command-line front end: configuration files, subcommands, JSON-lines
//! records and CSV summaries.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 verification
//! failure.

use std::collections::HashSet;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bracket::bowen_bracket;
use crate::experiments::{
    density_experiment, leaf_density_experiment, replay_hit, transitivity_experiment, LeafGrid, TransitivityBudget,
};
use crate::flow::{verify_anosov_bounds, AnosovConstants, DEFAULT_DISPLACEMENT, DEFAULT_T_GRID};
use crate::frame::{FrameElement, HalfPlanePoint, UnitTangent};
use crate::lattice::{translation_length, DeckElement};
use crate::oracle::{enumerate_classes, format_significant, spectrum_csv};
use crate::par::{sample_rng, Execution, Threads, Window};
use crate::shadowing::{
    audit_lemma_bound, dual_run_uniqueness, find_periodic_orbit_detailed, p_function, validate_result, FinderBudget,
    PeriodicOrbitResult,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "MODSHADOW_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

/// Unit tangent vector given as `re,im,angle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointArg {
    pub re: f64,
    pub im: f64,
    pub angle: f64,
}

impl PointArg {
    pub fn frame(&self) -> FrameElement {
        UnitTangent::new(HalfPlanePoint { re: self.re, im: self.im }, self.angle).to_frame()
    }
}

impl FromStr for PointArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [re, im, angle] = parts.as_slice() else {
            return Err(format!("expected re,im,angle, got {s:?}"));
        };
        let num = |x: &str| x.parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
        let p = PointArg { re: num(re)?, im: num(im)?, angle: num(angle)? };
        if !(p.im > 0.0) || !p.re.is_finite() || !p.angle.is_finite() {
            return Err(format!("point {s:?} is not in the upper half-plane"));
        }
        Ok(p)
    }
}

/// Effective configuration: defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub epsilon: f64,
    pub re_lo: f64,
    pub re_hi: f64,
    pub im_lo: f64,
    pub im_hi: f64,
    pub samples: usize,
    pub trace_max: i64,
    pub threads: Option<usize>,
    pub parallel: bool,
    pub half_window: f64,
    pub dt: f64,
    pub max_pair_distance: f64,
    pub min_return: f64,
    pub max_candidates: usize,
    pub max_iterations: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub period_tol: f64,
    pub min_coverage: Option<f64>,
    pub t0: f64,
    pub lambda_exp: f64,
    pub trials: usize,
    pub m_max: usize,
    pub radius: f64,
    pub t_max: f64,
    pub pairs: usize,
    pub tau_max: f64,
    pub eta: Option<f64>,
    pub x0: Option<PointArg>,
    pub x1: Option<PointArg>,
    pub u: Option<PointArg>,
    pub v: Option<PointArg>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = FinderBudget::default();
        RunConfig {
            seed: None,
            epsilon: 0.2,
            re_lo: -0.5,
            re_hi: 0.5,
            im_lo: 1.0,
            im_hi: 2.0,
            samples: 500,
            trace_max: 12,
            threads: None,
            parallel: cfg!(feature = "parallel"),
            half_window: b.half_window,
            dt: b.dt,
            max_pair_distance: b.max_pair_distance,
            min_return: b.min_return,
            max_candidates: b.max_candidates,
            max_iterations: b.max_iterations,
            k_max: b.k_max,
            restarts: b.restarts,
            period_tol: 1e-8,
            min_coverage: None,
            t0: 2.0,
            lambda_exp: 1.0,
            trials: 1000,
            m_max: 200,
            radius: 0.1,
            t_max: 200.0,
            pairs: 10,
            tau_max: 30.0,
            eta: None,
            x0: None,
            x1: None,
            u: None,
            v: None,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    /// Sets one `key = value` entry; keys use underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = Some(parse(key, value)?),
            "epsilon" => self.epsilon = parse(key, value)?,
            "re_lo" => self.re_lo = parse(key, value)?,
            "re_hi" => self.re_hi = parse(key, value)?,
            "im_lo" => self.im_lo = parse(key, value)?,
            "im_hi" => self.im_hi = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "trace_max" => self.trace_max = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "parallel" => self.parallel = parse(key, value)?,
            "half_window" => self.half_window = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "max_pair_distance" => self.max_pair_distance = parse(key, value)?,
            "min_return" => self.min_return = parse(key, value)?,
            "max_candidates" => self.max_candidates = parse(key, value)?,
            "max_iterations" => self.max_iterations = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "period_tol" => self.period_tol = parse(key, value)?,
            "min_coverage" => self.min_coverage = Some(parse(key, value)?),
            "t0" => self.t0 = parse(key, value)?,
            "lambda_exp" => self.lambda_exp = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "m_max" => self.m_max = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "pairs" => self.pairs = parse(key, value)?,
            "tau_max" => self.tau_max = parse(key, value)?,
            "eta" => self.eta = Some(parse(key, value)?),
            "x0" => self.x0 = Some(parse(key, value)?),
            "x1" => self.x1 = Some(parse(key, value)?),
            "u" => self.u = Some(parse(key, value)?),
            "v" => self.v = Some(parse(key, value)?),
            "output" => self.output = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("epsilon", self.epsilon),
            ("dt", self.dt),
            ("half_window", self.half_window),
            ("max_pair_distance", self.max_pair_distance),
            ("min_return", self.min_return),
            ("period_tol", self.period_tol),
            ("t0", self.t0),
            ("lambda_exp", self.lambda_exp),
            ("radius", self.radius),
            ("im_lo", self.im_lo),
        ];
        for (name, x) in positive {
            if !(x > 0.0) || !x.is_finite() {
                return Err(format!("{name} must be positive and finite, got {x}"));
            }
        }
        if !(self.re_lo <= self.re_hi && self.im_lo <= self.im_hi) {
            return Err("window bounds are reversed".into());
        }
        if self.samples == 0 || self.trials == 0 || self.pairs == 0 {
            return Err("samples, trials and pairs must be positive".into());
        }
        if self.threads == Some(0) {
            return Err("threads must be positive".into());
        }
        if let Some(c) = self.min_coverage {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("min_coverage {c} outside [0, 1]"));
            }
        }
        if !(self.t_max >= 0.0 && self.tau_max >= 0.0) {
            return Err("t_max and tau_max must be nonnegative".into());
        }
        Ok(())
    }

    pub fn budget(&self) -> FinderBudget {
        FinderBudget {
            half_window: self.half_window,
            dt: self.dt,
            max_pair_distance: self.max_pair_distance,
            min_return: self.min_return,
            max_candidates: self.max_candidates,
            max_iterations: self.max_iterations,
            k_max: self.k_max,
            restarts: self.restarts,
        }
    }

    pub fn window(&self) -> Window {
        Window {
            re_lo: self.re_lo,
            re_hi: self.re_hi,
            im_lo: self.im_lo,
            im_hi: self.im_hi,
            angle_lo: 0.0,
            angle_hi: std::f64::consts::TAU,
        }
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// SHA-256 of the effective configuration.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a `key = value` file over the defaults. `#` starts a comment.
pub fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let n = i + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{n}: expected `key = value`", path.display()))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(format!("{}:{n}: duplicate key {key:?}", path.display()));
        }
        cfg.set(key, value.trim()).map_err(|e| format!("{}:{n}: {e}", path.display()))?;
    }
    Ok(cfg)
}

/// Flags accepted by every subcommand; each overrides the config key of the
/// same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    re_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    re_hi: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    im_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    im_hi: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    trace_max: Option<i64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    parallel: Option<bool>,
    #[arg(long)]
    half_window: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    max_pair_distance: Option<f64>,
    #[arg(long)]
    min_return: Option<f64>,
    #[arg(long)]
    max_candidates: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    period_tol: Option<f64>,
    #[arg(long)]
    min_coverage: Option<f64>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    lambda_exp: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    tau_max: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Start point `re,im,angle`.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<PointArg>,
    /// Second point `re,im,angle` (bracket).
    #[arg(long, allow_hyphen_values = true)]
    x1: Option<PointArg>,
    /// Source ball center `re,im,angle` (transitivity).
    #[arg(long, allow_hyphen_values = true)]
    u: Option<PointArg>,
    /// Target ball center `re,im,angle` (transitivity).
    #[arg(long, allow_hyphen_values = true)]
    v: Option<PointArg>,
    /// Output prefix: writes `<prefix>.jsonl` and `<prefix>.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident; $($f:ident),*; $($o:ident),*) => {
        $( if let Some(v) = $ov.$f.clone() { $cfg.$f = v; } )*
        $( if $ov.$o.is_some() { $cfg.$o = $ov.$o.clone(); } )*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply!(cfg, self;
            epsilon, re_lo, re_hi, im_lo, im_hi, samples, trace_max, parallel, half_window, dt,
            max_pair_distance, min_return, max_candidates, max_iterations, k_max, restarts, period_tol,
            t0, lambda_exp, trials, m_max, radius, t_max, pairs, tau_max;
            seed, threads, min_coverage, eta, x0, x1, u, v, output);
    }
}

#[derive(Debug, Parser)]
#[command(name = "modshadow", version, about = "Closed geodesics, shadowing and density on the modular surface")]
pub struct Cli {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-verifies every orbit and hit record of a JSON-lines file.
    #[arg(long, value_name = "RECORD")]
    replay: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed orbit near one start point.
    Periodic(Overrides),
    /// Forward and backward shadows of a return, with the uniqueness check.
    Shadow(Overrides),
    /// Closed orbits from random starts in a window.
    Density(Overrides),
    /// Coverage of an epsilon-net by one weak-unstable leaf.
    LeafDensity(Overrides),
    /// Orbits from one ball to another.
    Transitivity(Overrides),
    /// Closed geodesics by trace, as CSV.
    Spectrum(Overrides),
    /// Randomized audit of the P-function bound.
    VerifyLemma(Overrides),
    /// Contraction audit of the stable and unstable directions.
    VerifyAnosov(Overrides),
    /// Bracket of two nearby points.
    Bracket(Overrides),
}

impl Command {
    fn parts(&self) -> (&'static str, &Overrides) {
        match self {
            Command::Periodic(o) => ("periodic", o),
            Command::Shadow(o) => ("shadow", o),
            Command::Density(o) => ("density", o),
            Command::LeafDensity(o) => ("leaf-density", o),
            Command::Transitivity(o) => ("transitivity", o),
            Command::Spectrum(o) => ("spectrum", o),
            Command::VerifyLemma(o) => ("verify-lemma", o),
            Command::VerifyAnosov(o) => ("verify-anosov", o),
            Command::Bracket(o) => ("bracket", o),
        }
    }

    fn needs_seed(name: &str) -> bool {
        matches!(name, "density" | "leaf-density" | "transitivity" | "verify-lemma" | "verify-anosov")
    }
}

/// Float written with 17 significant digits.
#[derive(Debug, Clone, Copy)]
pub struct Sig(pub f64);

impl Serialize for Sig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

fn sig4(m: [f64; 4]) -> [Sig; 4] {
    m.map(Sig)
}

#[derive(Serialize)]
struct Header<'a> {
    schema_version: u32,
    subcommand: &'a str,
    seed: Option<u64>,
    config_digest: &'a str,
}

#[derive(Serialize)]
struct Line<'a, T: Serialize> {
    #[serde(flatten)]
    header: &'a Header<'a>,
    kind: &'a str,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct OrbitBody {
    index: usize,
    x0: [Sig; 4],
    y: [Sig; 4],
    #[serde(rename = "T")]
    period: Sig,
    gamma: [i64; 4],
    closure_residual: Sig,
    oracle_length: Sig,
    start_distance: Sig,
    epsilon: Sig,
    word: Option<String>,
}

impl OrbitBody {
    fn new(index: usize, x0: &FrameElement, r: &PeriodicOrbitResult, epsilon: f64, word: Option<String>) -> Self {
        OrbitBody {
            index,
            x0: sig4(x0.entries()),
            y: sig4(r.y.entries()),
            period: Sig(r.period),
            gamma: r.gamma.entries(),
            closure_residual: Sig(r.closure_residual),
            oracle_length: Sig(r.oracle_period),
            start_distance: Sig(r.start_distance),
            epsilon: Sig(epsilon),
            word,
        }
    }
}

#[derive(Serialize)]
struct FailureBody<'a> {
    index: usize,
    x0: [Sig; 4],
    error: &'a str,
}

#[derive(Serialize)]
struct HitBody {
    index: usize,
    u: [Sig; 4],
    v: [Sig; 4],
    p: [Sig; 4],
    t: Sig,
    radius: Sig,
    start_distance: Sig,
    target_distance: Sig,
    replay_distance: Sig,
}

struct Outputs<'w> {
    jsonl: Box<dyn Write + 'w>,
    csv: Box<dyn Write + 'w>,
}

impl<'w> Outputs<'w> {
    fn open(prefix: Option<&Path>, stdout: &'w mut dyn Write, stderr: &'w mut dyn Write, csv_primary: bool) -> io::Result<Self> {
        match prefix {
            Some(p) => {
                let with = |ext: &str| {
                    let mut s = p.as_os_str().to_owned();
                    s.push(ext);
                    PathBuf::from(s)
                };
                Ok(Outputs {
                    jsonl: Box::new(io::BufWriter::new(fs::File::create(with(".jsonl"))?)),
                    csv: Box::new(io::BufWriter::new(fs::File::create(with(".csv"))?)),
                })
            }
            None if csv_primary => Ok(Outputs { jsonl: Box::new(io::sink()), csv: Box::new(stdout) }),
            None => Ok(Outputs { jsonl: Box::new(stdout), csv: Box::new(stderr) }),
        }
    }

    fn record<T: Serialize>(&mut self, header: &Header, kind: &str, body: T) -> io::Result<()> {
        let line = serde_json::to_string(&Line { header, kind, body }).map_err(io::Error::other)?;
        writeln!(self.jsonl, "{line}")
    }

    fn summary(&mut self, columns: &[&str], values: &[String]) -> io::Result<()> {
        writeln!(self.csv, "{}", columns.join(","))?;
        writeln!(self.csv, "{}", values.join(","))
    }

    fn finish(mut self) -> io::Result<()> {
        self.jsonl.flush()?;
        self.csv.flush()
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

/// Thread cap from the config and `MODSHADOW_THREADS`, the smaller winning.
fn thread_cap(cfg: &RunConfig, env: Option<String>) -> Result<Option<usize>, String> {
    let from_env = match env {
        None => None,
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(format!("{THREADS_ENV} must be a positive integer, got {s:?}")),
        },
    };
    Ok(match (cfg.threads, from_env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    match (&cli.replay, &cli.command) {
        (Some(path), None) => return replay(path, stdout, stderr),
        (Some(_), Some(_)) => {
            let _ = writeln!(stderr, "error: --replay takes no subcommand");
            return EXIT_USAGE;
        }
        (None, None) => {
            let _ = writeln!(stderr, "error: a subcommand is required (see --help)");
            return EXIT_USAGE;
        }
        (None, Some(_)) => {}
    }
    let command = cli.command.expect("checked above");
    let (name, overrides) = command.parts();
    let mut cfg = match &cli.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_USAGE;
            }
        },
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    if let Err(e) = cfg.validate() {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_USAGE;
    }
    if Command::needs_seed(name) && cfg.seed.is_none() {
        let _ = writeln!(stderr, "error: {name} requires --seed");
        return EXIT_USAGE;
    }
    let threads = match thread_cap(&cfg, std::env::var(THREADS_ENV).ok()) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let digest = cfg.digest();
    let header = Header { schema_version: SCHEMA_VERSION, subcommand: name, seed: cfg.seed, config_digest: &digest };
    let mut out = match Outputs::open(cfg.output.as_deref(), stdout, stderr, name == "spectrum") {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot open outputs: {e}");
            return EXIT_USAGE;
        }
    };
    let pool = Threads::new(threads);
    let result = run(name, &cfg, &header, &mut out, &pool);
    let code = match result {
        Ok(code) => code,
        Err(RunError::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(RunError::Io(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    };
    if let Err(e) = out.finish() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    code
}

enum RunError {
    Usage(String),
    Io(io::Error),
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<crate::error::Error> for RunError {
    fn from(e: crate::error::Error) -> Self {
        RunError::Usage(e.to_string())
    }
}

fn verdict(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}

fn start_point(cfg: &RunConfig, key: &str, given: Option<PointArg>) -> Result<FrameElement, RunError> {
    match (given, cfg.seed) {
        (Some(p), _) => Ok(p.frame()),
        (None, Some(seed)) => Ok(cfg.window().sample(&mut sample_rng(seed, 0))),
        (None, None) => Err(RunError::Usage(format!("--{key} or --seed is required"))),
    }
}

fn run(name: &str, cfg: &RunConfig, header: &Header, out: &mut Outputs, pool: &Threads) -> Result<i32, RunError> {
    match name {
        "periodic" => run_periodic(cfg, header, out),
        "shadow" => run_shadow(cfg, header, out),
        "density" => run_density(cfg, header, out, pool),
        "leaf-density" => run_leaf(cfg, header, out, pool),
        "transitivity" => run_transitivity(cfg, header, out, pool),
        "spectrum" => run_spectrum(cfg, header, out),
        "verify-lemma" => run_lemma(cfg, header, out),
        "verify-anosov" => run_anosov(cfg, header, out, pool),
        "bracket" => run_bracket(cfg, header, out),
        _ => Err(RunError::Usage(format!("unknown subcommand {name}"))),
    }
}

fn run_periodic(cfg: &RunConfig, header: &Header, out: &mut Outputs) -> Result<i32, RunError> {
    let x0 = start_point(cfg, "x0", cfg.x0)?;
    let found = find_periodic_orbit_detailed(&x0, cfg.epsilon, &cfg.budget())
        .and_then(|o| validate_result(&x0, &o.result, cfg.epsilon).map(|_| o));
    let ok = match found {
        Ok(o) => {
            let word = crate::oracle::canonical_word(&o.result.gamma).ok();
            out.record(header, "orbit", OrbitBody::new(0, &x0, &o.result, cfg.epsilon, word))?;
            out.summary(
                &["found", "T", "trace", "start_distance", "closure_residual"],
                &["1".into(), num(o.result.period), o.result.gamma.trace().to_string(), num(o.result.start_distance), num(o.result.closure_residual)],
            )?;
            true
        }
        Err(e) => {
            out.record(header, "failure", FailureBody { index: 0, x0: sig4(x0.entries()), error: &e.to_string() })?;
            out.summary(&["found", "T", "trace", "start_distance", "closure_residual"], &["0".into(), String::new(), String::new(), String::new(), String::new()])?;
            false
        }
    };
    Ok(verdict(ok))
}

#[derive(Serialize)]
struct ShadowBody {
    epsilon: Sig,
    run_epsilon: Sig,
    eta: Sig,
    t0: Sig,
    forward_s: Sig,
    backward_s: Sig,
    forward_max_residual: Sig,
    backward_max_residual: Sig,
    unique: bool,
}

fn run_shadow(cfg: &RunConfig, header: &Header, out: &mut Outputs) -> Result<i32, RunError> {
    let x0 = start_point(cfg, "x0", cfg.x0)?;
    let outcome = match find_periodic_orbit_detailed(&x0, cfg.epsilon, &cfg.budget()) {
        Ok(o) => o,
        Err(e) => {
            out.record(header, "failure", FailureBody { index: 0, x0: sig4(x0.entries()), error: &e.to_string() })?;
            return Ok(EXIT_VERIFY);
        }
    };
    let p = &outcome.params;
    let u0 = p.delta / 30.0;
    let unique = dual_run_uniqueness(&outcome, u0, cfg.max_iterations).map(|r| r.unique).unwrap_or(false);
    let body = ShadowBody {
        epsilon: Sig(cfg.epsilon),
        run_epsilon: Sig(p.epsilon),
        eta: Sig(p.eta),
        t0: Sig(outcome.ret.t0),
        forward_s: Sig(outcome.forward.s),
        backward_s: Sig(outcome.backward.s),
        forward_max_residual: Sig(outcome.forward.max_residual()),
        backward_max_residual: Sig(outcome.backward.max_residual()),
        unique,
    };
    let ok = unique
        && outcome.forward.max_residual() <= p.epsilon / 3.0
        && outcome.backward.max_residual() <= p.epsilon / 3.0
        && outcome.forward.s.abs() <= p.eta
        && outcome.backward.s.abs() <= p.eta;
    out.record(header, "shadow", body)?;
    let word = crate::oracle::canonical_word(&outcome.result.gamma).ok();
    out.record(header, "orbit", OrbitBody::new(0, &x0, &outcome.result, cfg.epsilon, word))?;
    out.summary(
        &["run_epsilon", "eta", "forward_max_residual", "backward_max_residual", "forward_s", "unique"],
        &[
            num(p.epsilon),
            num(p.eta),
            num(outcome.forward.max_residual()),
            num(outcome.backward.max_residual()),
            num(outcome.forward.s),
            unique.to_string(),
        ],
    )?;
    Ok(verdict(ok))
}

fn run_density(cfg: &RunConfig, header: &Header, out: &mut Outputs, pool: &Threads) -> Result<i32, RunError> {
    let seed = cfg.seed.expect("seed checked");
    let report = pool.install(|| density_experiment(&cfg.window(), cfg.epsilon, cfg.samples, seed, &cfg.budget(), cfg.execution()))?;
    for r in &report.records {
        match (&r.result, &r.error) {
            (Some(res), None) => out.record(header, "orbit", OrbitBody::new(r.index, &r.x0, res, cfg.epsilon, r.word.clone()))?,
            (_, err) => out.record(
                header,
                "failure",
                FailureBody { index: r.index, x0: sig4(r.x0.entries()), error: err.as_deref().unwrap_or("unknown") },
            )?,
        }
    }
    out.summary(
        &["samples", "successes", "coverage", "max_start_distance", "min_period", "max_period", "max_closure", "oracle_matched", "wall_time_s"],
        &[
            report.samples.to_string(),
            report.successes.to_string(),
            num(report.coverage),
            num(report.max_start_distance),
            num(report.min_period),
            num(report.max_period),
            num(report.max_closure),
            report.oracle_matched.to_string(),
            num(report.wall_time_s),
        ],
    )?;
    Ok(verdict(report.coverage >= cfg.min_coverage.unwrap_or(0.99)))
}

fn run_leaf(cfg: &RunConfig, header: &Header, out: &mut Outputs, pool: &Threads) -> Result<i32, RunError> {
    let x = start_point(cfg, "x0", cfg.x0)?;
    let grid = LeafGrid { tau_max: cfg.tau_max, ..LeafGrid::default() };
    let report = pool.install(|| leaf_density_experiment(&x, &cfg.window(), cfg.epsilon, &grid, cfg.execution()))?;
    out.record(header, "leaf", &report)?;
    out.summary(
        &["net_points", "leaf_samples", "covered", "coverage", "control_coverage", "audit_residual"],
        &[
            report.net_points.to_string(),
            report.leaf_samples.to_string(),
            report.covered.to_string(),
            num(report.coverage),
            num(report.control_coverage),
            num(report.audit_residual),
        ],
    )?;
    Ok(verdict(report.coverage >= cfg.min_coverage.unwrap_or(0.95) && report.audit_residual <= 1e-9))
}

fn run_transitivity(cfg: &RunConfig, header: &Header, out: &mut Outputs, pool: &Threads) -> Result<i32, RunError> {
    let seed = cfg.seed.expect("seed checked");
    let budget = TransitivityBudget { t_max: cfg.t_max, ..TransitivityBudget::default() };
    let window = cfg.window();
    window.validate()?;
    let explicit = cfg.u.is_some() || cfg.v.is_some();
    let n = if explicit { 1 } else { cfg.pairs };
    let pairs: Vec<(FrameElement, FrameElement)> = (0..n)
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let u = window.sample(&mut rng);
            let v = window.sample(&mut rng);
            (cfg.u.map(|p| p.frame()).unwrap_or(u), cfg.v.map(|p| p.frame()).unwrap_or(v))
        })
        .collect();
    let results = pool.install(|| {
        cfg.execution().map_indexed(n, |i| transitivity_experiment(&pairs[i].0, &pairs[i].1, cfg.radius, &budget))
    });
    let mut hits = 0;
    let mut t_max_hit: f64 = 0.0;
    for (i, (r, (u, v))) in results.iter().zip(&pairs).enumerate() {
        match r {
            Ok(h) => {
                hits += 1;
                t_max_hit = t_max_hit.max(h.t);
                out.record(
                    header,
                    "hit",
                    HitBody {
                        index: i,
                        u: sig4(u.entries()),
                        v: sig4(v.entries()),
                        p: sig4(h.p.entries()),
                        t: Sig(h.t),
                        radius: Sig(cfg.radius),
                        start_distance: Sig(h.start_distance),
                        target_distance: Sig(h.target_distance),
                        replay_distance: Sig(h.replay_distance),
                    },
                )?;
            }
            Err(e) => out.record(header, "failure", FailureBody { index: i, x0: sig4(u.entries()), error: &e.to_string() })?,
        }
    }
    out.summary(&["pairs", "hits", "max_hit_time"], &[n.to_string(), hits.to_string(), num(t_max_hit)])?;
    Ok(verdict(hits == n))
}

fn run_spectrum(cfg: &RunConfig, header: &Header, out: &mut Outputs) -> Result<i32, RunError> {
    let classes = enumerate_classes(cfg.trace_max)?;
    #[derive(Serialize)]
    struct ClassBody<'a> {
        trace: i64,
        word: &'a str,
        length: Sig,
        representative: [i64; 4],
    }
    for c in &classes {
        out.record(header, "class", ClassBody { trace: c.trace, word: &c.word, length: Sig(c.length), representative: c.representative.entries() })?;
    }
    write!(out.csv, "{}", spectrum_csv(&classes))?;
    Ok(EXIT_OK)
}

fn run_lemma(cfg: &RunConfig, header: &Header, out: &mut Outputs) -> Result<i32, RunError> {
    let seed = cfg.seed.expect("seed checked");
    let lambda = (-cfg.lambda_exp).exp();
    let audit = audit_lemma_bound(cfg.t0, lambda, cfg.trials, cfg.m_max, seed);
    // m = 0 against the closed form λ^t + λ^{t0 - t}
    let closed = (0..=64)
        .map(|i| {
            let t = cfg.t0 * i as f64 / 64.0;
            (p_function(t, cfg.t0, lambda, &[], 0) - (lambda.powf(t) + lambda.powf(cfg.t0 - t))).abs()
        })
        .fold(0.0, f64::max);
    out.record(header, "lemma", &audit)?;
    out.summary(
        &["trials", "max_p", "k", "max_ratio", "closed_form_residual"],
        &[audit.trials.to_string(), num(audit.max_p), num(audit.k), num(audit.max_ratio), num(closed)],
    )?;
    Ok(verdict(audit.max_p <= audit.k + 1e-12 && closed <= 1e-12))
}

fn run_anosov(cfg: &RunConfig, header: &Header, out: &mut Outputs, pool: &Threads) -> Result<i32, RunError> {
    let seed = cfg.seed.expect("seed checked");
    let constants = AnosovConstants::new(2.0, (-cfg.lambda_exp).exp())?;
    let report = pool.install(|| {
        verify_anosov_bounds(&cfg.window(), constants, &DEFAULT_T_GRID, DEFAULT_DISPLACEMENT, cfg.samples, seed, cfg.execution())
    })?;
    out.record(header, "anosov", &report)?;
    out.summary(
        &["samples", "stable_ratio", "unstable_ratio", "negative_control_ratio", "parameter_residual"],
        &[
            report.samples.to_string(),
            num(report.stable_ratio),
            num(report.unstable_ratio),
            num(report.negative_control_ratio),
            num(report.parameter_residual),
        ],
    )?;
    Ok(verdict(report.passed()))
}

fn run_bracket(cfg: &RunConfig, header: &Header, out: &mut Outputs) -> Result<i32, RunError> {
    let (Some(y), Some(z)) = (cfg.x0, cfg.x1) else {
        return Err(RunError::Usage("bracket requires --x0 and --x1".into()));
    };
    let eta = cfg.eta.unwrap_or(f64::INFINITY);
    #[derive(Serialize)]
    struct BracketBody<'a> {
        w: Option<[Sig; 4]>,
        sigma: Option<Sig>,
        nu: Option<Sig>,
        c: Option<Sig>,
        residual: Option<Sig>,
        error: Option<&'a str>,
    }
    match bowen_bracket(&y.frame(), &z.frame(), eta) {
        Ok(b) => {
            out.record(
                header,
                "bracket",
                BracketBody {
                    w: Some(sig4(b.w.entries())),
                    sigma: Some(Sig(b.params.sigma)),
                    nu: Some(Sig(b.params.nu)),
                    c: Some(Sig(b.params.c)),
                    residual: Some(Sig(b.residual)),
                    error: None,
                },
            )?;
            out.summary(&["sigma", "nu", "c", "residual"], &[num(b.params.sigma), num(b.params.nu), num(b.params.c), num(b.residual)])?;
            Ok(verdict(b.residual <= 1e-10))
        }
        Err(e) => {
            let msg = e.to_string();
            out.record(header, "bracket", BracketBody { w: None, sigma: None, nu: None, c: None, residual: None, error: Some(&msg) })?;
            Ok(EXIT_VERIFY)
        }
    }
}

fn frame_field(v: &Value, key: &str) -> Result<FrameElement, String> {
    let arr = v.get(key).and_then(Value::as_array).ok_or_else(|| format!("missing {key}"))?;
    let m: Vec<f64> = arr.iter().filter_map(Value::as_f64).collect();
    let [a, b, c, d] = m.as_slice() else {
        return Err(format!("{key} must hold 4 numbers"));
    };
    FrameElement::new(*a, *b, *c, *d).map_err(|e| format!("{key}: {e}"))
}

fn f64_field(v: &Value, key: &str) -> Result<f64, String> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| format!("missing {key}"))
}

/// Outcome of re-verifying one record: `Ok(None)` for kinds without a replay.
fn replay_record(v: &Value) -> Result<Option<()>, String> {
    match v.get("kind").and_then(Value::as_str) {
        Some("orbit") => {
            let x0 = frame_field(v, "x0")?;
            let y = frame_field(v, "y")?;
            let g: Vec<i64> = v
                .get("gamma")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_i64).collect())
                .unwrap_or_default();
            let [a, b, c, d] = g.as_slice() else {
                return Err("gamma must hold 4 integers".into());
            };
            let gamma = DeckElement::new(*a, *b, *c, *d).map_err(|e| e.to_string())?;
            let period = f64_field(v, "T")?;
            let epsilon = f64_field(v, "epsilon")?;
            let oracle = translation_length(&gamma).map_err(|e| e.to_string())?;
            if (oracle - f64_field(v, "oracle_length")?).abs() > 1e-12 {
                return Err(format!("oracle length {oracle} differs from the record"));
            }
            let r = PeriodicOrbitResult {
                y,
                period,
                gamma,
                closure_residual: f64_field(v, "closure_residual")?,
                oracle_period: oracle,
                start_distance: f64_field(v, "start_distance")?,
            };
            validate_result(&x0, &r, epsilon).map_err(|e| e.to_string())?;
            let closure = crate::shadowing::closure_residual(&y, period);
            let start = crate::lattice::quotient_dist(&y, &x0);
            if (closure - r.closure_residual).abs() > 1e-12 || (start - r.start_distance).abs() > 1e-12 {
                return Err(format!("recomputed closure {closure:.3e} / start {start:.6} differ from the record"));
            }
            Ok(Some(()))
        }
        Some("hit") => {
            let p = frame_field(v, "p")?;
            let u = frame_field(v, "u")?;
            let target = frame_field(v, "v")?;
            let t = f64_field(v, "t")?;
            let radius = f64_field(v, "radius")?;
            let d = replay_hit(&p, t, &target);
            let start = crate::frame::chart_dist(&u, &p);
            if d > radius || start > radius {
                return Err(format!("replayed distances {start:.4} / {d:.4} exceed radius {radius}"));
            }
            Ok(Some(()))
        }
        _ => Ok(None),
    }
}

fn replay(path: &Path, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", path.display());
            return EXIT_USAGE;
        }
    };
    let (mut checked, mut failed) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(stderr, "error: {}:{}: {e}", path.display(), i + 1);
                return EXIT_USAGE;
            }
        };
        if v.get("schema_version").and_then(Value::as_u64) != Some(SCHEMA_VERSION as u64) {
            let _ = writeln!(stderr, "error: {}:{}: unsupported schema version", path.display(), i + 1);
            return EXIT_USAGE;
        }
        match replay_record(&v) {
            Ok(Some(())) => checked += 1,
            Ok(None) => {}
            Err(e) => {
                checked += 1;
                failed += 1;
                let _ = writeln!(stderr, "line {}: mismatch: {e}", i + 1);
            }
        }
    }
    let _ = writeln!(stdout, "replayed {checked} records, {failed} mismatches");
    if checked == 0 {
        let _ = writeln!(stderr, "error: no orbit or hit records in {}", path.display());
        return EXIT_USAGE;
    }
    verdict(failed == 0)
}

/// Spectrum length formatted as in the CSV output.
pub fn format_length(x: f64) -> String {
    format_significant(x, 15)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("modshadow").chain(args.iter().copied());
        let code = cli_main(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn point_parsing() {
        let p: PointArg = "0.1, 1.5, -2".parse().unwrap();
        assert_eq!((p.re, p.im, p.angle), (0.1, 1.5, -2.0));
        assert!("0.1,1.5".parse::<PointArg>().is_err());
        assert!("0.1,-1,0".parse::<PointArg>().is_err());
    }

    #[test]
    fn sig_has_17_digits() {
        let s = serde_json::to_string(&Sig(1.9248473002384139)).unwrap();
        assert_eq!(s, "1.9248473002384139e0");
        let back: f64 = serde_json::from_str(&s).unwrap();
        assert_eq!(back, 1.9248473002384139);
        assert_eq!(serde_json::to_string(&Sig(f64::NAN)).unwrap(), "null");
    }

    #[test]
    fn thread_cap_rules() {
        let mut cfg = RunConfig::default();
        assert_eq!(thread_cap(&cfg, None).unwrap(), None);
        assert_eq!(thread_cap(&cfg, Some("3".into())).unwrap(), Some(3));
        assert!(thread_cap(&cfg, Some("0".into())).is_err());
        assert!(thread_cap(&cfg, Some("x".into())).is_err());
        cfg.threads = Some(2);
        assert_eq!(thread_cap(&cfg, Some("3".into())).unwrap(), Some(2));
    }

    #[test]
    fn digest_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.epsilon = 0.3;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_cli(&["nope"]).0, EXIT_USAGE);
        assert_eq!(run_cli(&["spectrum", "--bogus", "1"]).0, EXIT_USAGE);
        assert_eq!(run_cli(&[]).0, EXIT_USAGE);
        assert_eq!(run_cli(&["density", "--samples", "1"]).0, EXIT_USAGE);
        assert_eq!(run_cli(&["spectrum", "--epsilon", "-1"]).0, EXIT_USAGE);
        assert_eq!(run_cli(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn spectrum_output() {
        let (code, out, _) = run_cli(&["spectrum", "--trace-max", "6"]);
        assert_eq!(code, EXIT_OK);
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("trace,word,length"));
        assert!(lines.next().unwrap().starts_with("3,RL,1.92484730"));
    }

    #[test]
    fn lemma_output() {
        let (code, out, err) = run_cli(&["verify-lemma", "--trials", "1000", "--t0", "2", "--lambda-exp", "1", "--seed", "1"]);
        assert_eq!(code, EXIT_OK, "{err}");
        let v: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
        assert_eq!(v["kind"], "lemma");
        assert_eq!(v["schema_version"], 1);
        assert!((v["k"].as_f64().unwrap() - 2.5819767068693267).abs() < 1e-12);
        assert!(v["max_p"].as_f64().unwrap() <= v["k"].as_f64().unwrap());
        assert!(err.contains("max_p"));
    }
}
