//! Parameter scans, PT loci and their CSV/SVG/config representations.
//!
//! A scan is one or two axes over `F`, `kappa`, `m` or `alpha`, evaluated in
//! row-major order (first axis outer). Results are assembled by index, so the
//! worker count never changes the output.
//!
//! Config files are flat `key=value` lines; `#` starts a comment. Keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `m`, `nu`, `kappa`, `F` | fixed model parameters | `0.5e6`, `1e14`, `0`, `0.1` |
//! | `T` | pinned sweep duration, s | per-point `sweep_duration` |
//! | `f_r_max`, `f_det_max`, `t_cap` | hardware limits | `13.6e6`, `50e6`, `10e-6` |
//! | `mode` | `numeric`, `analytic`, `dephased`, `amplitude-error` | `numeric` |
//! | `axisN.param` | `F`, `kappa`, `m`, `alpha` (N = 1, 2) | |
//! | `axisN.lo`, `axisN.hi` | range | |
//! | `axisN.count` | points (0 for an empty grid, else ≥ 2) | `101` |
//! | `axisN.spacing` | `linear` or `log` | `linear` |
//! | `fwhm`, `n_nodes`, `span_sigmas` | dephasing line | `0`, `41`, `4` |
//! | `alpha`, `channel` | amplitude error | `1`, `drive` |
//! | `rel_tol`, `abs_tol` | propagation tolerances | `1e-10`, `1e-12` (`1e-11`, `1e-13` for `amplitude-error`) |

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::analytics::{locate_pt_speed, pt_speed, tlz_probability, PtCondition};
use crate::error::{Result, TlzError};
use crate::model::{DriveParams, HardwareLimits};
use crate::noise::{
    amplitude_error_probability_with, dephased_probability_with, rabi_probability,
    robustness_options, Channel, DephasingModel,
};
use crate::propagator::{propagate_sweep, PropagationOptions};
use crate::pulse::fmt17;

/// Version string written into exported files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Axis point count used when a config omits `axisN.count`.
pub const DEFAULT_AXIS_COUNT: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Param {
    F,
    Kappa,
    M,
    Alpha,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::F => "F",
            Param::Kappa => "kappa",
            Param::M => "m",
            Param::Alpha => "alpha",
        })
    }
}

impl FromStr for Param {
    type Err = TlzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Param::F),
            "kappa" => Ok(Param::Kappa),
            "m" => Ok(Param::M),
            "alpha" => Ok(Param::Alpha),
            _ => Err(TlzError::InvalidScan(format!("unknown axis parameter {s:?} (F|kappa|m|alpha)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

impl fmt::Display for Spacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spacing::Linear => "linear",
            Spacing::Log => "log",
        })
    }
}

impl FromStr for Spacing {
    type Err = TlzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Spacing::Linear),
            "log" => Ok(Spacing::Log),
            _ => Err(TlzError::InvalidScan(format!("unknown spacing {s:?} (linear|log)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Axis {
    pub fn linear(param: Param, lo: f64, hi: f64, count: usize) -> Self {
        Axis { param, lo, hi, count, spacing: Spacing::Linear }
    }

    pub fn log(param: Param, lo: f64, hi: f64, count: usize) -> Self {
        Axis { param, lo, hi, count, spacing: Spacing::Log }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(TlzError::InvalidScan(format!("{} range must be finite", self.param)));
        }
        if self.count == 1 {
            return Err(TlzError::InvalidScan(format!("{} axis needs 0 or at least 2 points", self.param)));
        }
        if self.spacing == Spacing::Log && !(self.lo * self.hi > 0.0) {
            return Err(TlzError::InvalidScan(format!(
                "log {} axis needs nonzero bounds of one sign, got [{}, {}]",
                self.param, self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Grid values with both endpoints exact.
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        if n < 2 {
            return vec![self.lo; n];
        }
        let last = (n - 1) as f64;
        (0..n)
            .map(|k| {
                if k == 0 {
                    return self.lo;
                }
                if k == n - 1 {
                    return self.hi;
                }
                let s = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.lo + (self.hi - self.lo) * s,
                    Spacing::Log => {
                        let (a, b) = (self.lo.abs().ln(), self.hi.abs().ln());
                        self.lo.signum() * (a + (b - a) * s).exp()
                    }
                }
            })
            .collect()
    }

    /// Position of `v` along the axis as a fraction of `[lo, hi]`, in the
    /// axis' own spacing.
    pub fn fraction(&self, v: f64) -> f64 {
        match self.spacing {
            Spacing::Linear => (v - self.lo) / (self.hi - self.lo),
            Spacing::Log => (v.abs().ln() - self.lo.abs().ln()) / (self.hi.abs().ln() - self.lo.abs().ln()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    Numeric,
    Analytic,
    Dephased,
    AmplitudeError,
}

impl ScanMode {
    /// Modes that propagate and therefore cannot take `F = 0`.
    pub fn propagates(self) -> bool {
        self != ScanMode::Analytic
    }
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanMode::Numeric => "numeric",
            ScanMode::Analytic => "analytic",
            ScanMode::Dephased => "dephased",
            ScanMode::AmplitudeError => "amplitude-error",
        })
    }
}

impl FromStr for ScanMode {
    type Err = TlzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numeric" => Ok(ScanMode::Numeric),
            "analytic" => Ok(ScanMode::Analytic),
            "dephased" => Ok(ScanMode::Dephased),
            "amplitude-error" => Ok(ScanMode::AmplitudeError),
            _ => Err(TlzError::InvalidScan(format!(
                "unknown mode {s:?} (numeric|analytic|dephased|amplitude-error)"
            ))),
        }
    }
}

fn channel_name(c: Channel) -> &'static str {
    match c {
        Channel::Drive => "drive",
        Channel::Prep => "prep",
        Channel::Both => "both",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSpec {
    pub axes: Vec<Axis>,
    /// Fixed parameters; axis values override the matching field per point.
    pub base: DriveParams,
    pub mode: ScanMode,
    pub dephasing: DephasingModel,
    pub alpha: f64,
    pub channel: Channel,
    pub options: PropagationOptions,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            axes: Vec::new(),
            base: DriveParams::new(0.5e6, 1e14, 0.0, 0.1),
            mode: ScanMode::Numeric,
            dephasing: DephasingModel::new(0.0),
            alpha: 1.0,
            channel: Channel::Drive,
            options: PropagationOptions::default(),
        }
    }
}

impl ScanSpec {
    pub fn new(axes: Vec<Axis>, base: DriveParams, mode: ScanMode) -> Self {
        ScanSpec { axes, base, mode, ..ScanSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(TlzError::InvalidScan(format!("need 1 or 2 axes, got {}", self.axes.len())));
        }
        for a in &self.axes {
            a.validate()?;
            if a.param == Param::Alpha && self.mode != ScanMode::AmplitudeError {
                return Err(TlzError::InvalidScan("an alpha axis needs mode=amplitude-error".into()));
            }
        }
        if self.axes.len() == 2 && self.axes[0].param == self.axes[1].param {
            return Err(TlzError::InvalidScan(format!("both axes scan {}", self.axes[0].param)));
        }
        // fixed values are checked at a representative nonzero speed
        self.base.with_speed(1.0).validate().map_err(|e| TlzError::InvalidScan(e.to_string()))?;
        self.options.validate().map_err(|e| TlzError::InvalidScan(e.to_string()))?;
        if self.mode == ScanMode::Dephased {
            self.dephasing.validate().map_err(|e| TlzError::InvalidScan(e.to_string()))?;
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TlzError::InvalidScan(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Per-axis grid values. In propagating modes an exact `F = 0` is moved
    /// half a step towards the next grid point.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        self.axes
            .iter()
            .map(|a| {
                let mut v = a.values();
                if a.param == Param::F && self.mode.propagates() && v.len() >= 2 {
                    let half = 0.5 * (a.hi - a.lo) / (v.len() - 1) as f64;
                    for x in v.iter_mut().filter(|x| **x == 0.0) {
                        *x = half;
                    }
                }
                v
            })
            .collect()
    }

    /// `key=value` pairs in config syntax, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let num = |x: f64| format!("{x:e}");
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        let b = &self.base;
        put("mode", self.mode.to_string());
        put("m", num(b.m));
        put("nu", num(b.nu));
        put("kappa", num(b.kappa));
        put("F", num(b.speed));
        if let Some(t) = b.duration {
            put("T", num(t));
        }
        put("f_r_max", num(b.limits.f_r_max));
        put("f_det_max", num(b.limits.f_det_max));
        put("t_cap", num(b.limits.t_cap));
        for (i, a) in self.axes.iter().enumerate() {
            let p = format!("axis{}", i + 1);
            put(&format!("{p}.param"), a.param.to_string());
            put(&format!("{p}.lo"), num(a.lo));
            put(&format!("{p}.hi"), num(a.hi));
            put(&format!("{p}.count"), a.count.to_string());
            put(&format!("{p}.spacing"), a.spacing.to_string());
        }
        match self.mode {
            ScanMode::Dephased => {
                put("fwhm", num(self.dephasing.fwhm));
                put("n_nodes", self.dephasing.n_nodes.to_string());
                put("span_sigmas", num(self.dephasing.span_sigmas));
            }
            ScanMode::AmplitudeError => {
                put("alpha", num(self.alpha));
                put("channel", channel_name(self.channel).to_string());
            }
            _ => {}
        }
        if self.mode.propagates() {
            put("rel_tol", num(self.options.rel_tol));
            put("abs_tol", num(self.options.abs_tol));
        }
        out
    }

    /// Parses a config file body. See the module docs for the key list.
    pub fn from_config_str(text: &str) -> Result<ScanSpec> {
        ScanConfig::parse(text)?.to_spec()
    }

    pub fn from_config_file(path: &Path) -> Result<ScanSpec> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TlzError::Io { path: path.to_path_buf(), source })?;
        ScanSpec::from_config_str(&text)
    }
}

/// Every key a config file may contain.
pub const CONFIG_KEYS: &[&str] = &[
    "m", "nu", "kappa", "F", "T", "f_r_max", "f_det_max", "t_cap", "mode",
    "axis1.param", "axis1.lo", "axis1.hi", "axis1.count", "axis1.spacing",
    "axis2.param", "axis2.lo", "axis2.hi", "axis2.count", "axis2.spacing",
    "fwhm", "n_nodes", "span_sigmas", "alpha", "channel", "rel_tol", "abs_tol",
];

/// Raw `key=value` settings, validated against [`CONFIG_KEYS`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanConfig {
    values: BTreeMap<String, (usize, String)>,
}

impl ScanConfig {
    pub fn parse(text: &str) -> Result<ScanConfig> {
        let mut cfg = ScanConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(TlzError::Config { line: i + 1, reason: format!("expected key=value, got {line:?}") });
            };
            let (k, v) = (k.trim(), v.trim());
            if cfg.values.contains_key(k) {
                return Err(TlzError::Config { line: i + 1, reason: format!("duplicate key {k:?}") });
            }
            cfg.insert(i + 1, k, v)?;
        }
        Ok(cfg)
    }

    fn insert(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        if !CONFIG_KEYS.contains(&key) {
            return Err(TlzError::Config { line, reason: format!("unknown key {key:?}") });
        }
        self.values.insert(key.to_string(), (line, value.to_string()));
        Ok(())
    }

    /// Sets or replaces a key (line 0 marks a command-line override).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.insert(0, key, value)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| TlzError::Config { line: *line, reason: format!("bad value {v:?} for {key}") }),
        }
    }

    fn get_with<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => parse(v)
                .map(Some)
                .map_err(|e| TlzError::Config { line: *line, reason: e.to_string() }),
        }
    }

    pub fn to_spec(&self) -> Result<ScanSpec> {
        let d = ScanSpec::default();
        let limits = HardwareLimits {
            f_r_max: self.get("f_r_max")?.unwrap_or(d.base.limits.f_r_max),
            f_det_max: self.get("f_det_max")?.unwrap_or(d.base.limits.f_det_max),
            t_cap: self.get("t_cap")?.unwrap_or(d.base.limits.t_cap),
        };
        let base = DriveParams {
            m: self.get("m")?.unwrap_or(d.base.m),
            nu: self.get("nu")?.unwrap_or(d.base.nu),
            kappa: self.get("kappa")?.unwrap_or(d.base.kappa),
            speed: self.get("F")?.unwrap_or(d.base.speed),
            duration: self.get("T")?,
            limits,
        };
        let mut axes = Vec::new();
        for n in 1..=2 {
            let key = |s: &str| format!("axis{n}.{s}");
            let Some(param) = self.get_with(&key("param"), Param::from_str)? else {
                if self.values.keys().any(|k| k.starts_with(&format!("axis{n}."))) {
                    return Err(TlzError::InvalidScan(format!("axis{n} needs axis{n}.param")));
                }
                continue;
            };
            let need = |s: &str| -> Result<f64> {
                self.get(&key(s))?.ok_or_else(|| TlzError::InvalidScan(format!("missing {}", key(s))))
            };
            axes.push(Axis {
                param,
                lo: need("lo")?,
                hi: need("hi")?,
                count: self.get(&key("count"))?.unwrap_or(DEFAULT_AXIS_COUNT),
                spacing: self.get_with(&key("spacing"), Spacing::from_str)?.unwrap_or(Spacing::Linear),
            });
        }
        let dephasing = DephasingModel {
            fwhm: self.get("fwhm")?.unwrap_or(d.dephasing.fwhm),
            n_nodes: self.get("n_nodes")?.unwrap_or(d.dephasing.n_nodes),
            span_sigmas: self.get("span_sigmas")?.unwrap_or(d.dephasing.span_sigmas),
        };
        let mode = self.get_with("mode", ScanMode::from_str)?.unwrap_or(d.mode);
        let tol = if mode == ScanMode::AmplitudeError { robustness_options() } else { d.options };
        let spec = ScanSpec {
            axes,
            base,
            mode,
            dephasing,
            alpha: self.get("alpha")?.unwrap_or(d.alpha),
            channel: self.get_with("channel", Channel::from_str)?.unwrap_or(d.channel),
            options: d.options.with_tolerance(
                self.get("rel_tol")?.unwrap_or(tol.rel_tol),
                self.get("abs_tol")?.unwrap_or(tol.abs_tol),
            ),
        };
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanPoint {
    pub coords: Vec<f64>,
    /// `None` when evaluation failed; see `error`.
    pub p: Option<f64>,
    pub norm_drift: Option<f64>,
    pub n_steps: Option<u32>,
    /// The value is the `F → 0` limit rather than a formula evaluation.
    pub limit: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub spec: ScanSpec,
    pub axis_values: Vec<Vec<f64>>,
    /// Row-major, first axis outermost.
    pub points: Vec<ScanPoint>,
    pub version: &'static str,
    /// Seconds spent evaluating the grid.
    pub wall_time: f64,
}

impl ScanResult {
    pub fn shape(&self) -> Vec<usize> {
        self.axis_values.iter().map(Vec::len).collect()
    }

    /// Probabilities as rows over the last axis.
    pub fn matrix(&self) -> Vec<Vec<Option<f64>>> {
        let cols = self.axis_values.last().map_or(0, Vec::len).max(1);
        self.points.chunks(cols).map(|row| row.iter().map(|p| p.p).collect()).collect()
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.p.is_none()).count()
    }

    fn has_diagnostics(&self) -> bool {
        self.spec.mode == ScanMode::Numeric
    }
}

/// The parameters and α used at one grid point.
pub fn point_params(spec: &ScanSpec, coords: &[f64]) -> (DriveParams, f64) {
    let mut p = spec.base;
    let mut alpha = spec.alpha;
    for (axis, &v) in spec.axes.iter().zip(coords) {
        match axis.param {
            Param::F => p.speed = v,
            Param::Kappa => p.kappa = v,
            Param::M => p.m = v,
            Param::Alpha => alpha = v,
        }
    }
    (p, alpha)
}

fn evaluate(spec: &ScanSpec, coords: Vec<f64>) -> ScanPoint {
    let (params, alpha) = point_params(spec, &coords);
    let mut point = ScanPoint { coords, p: None, norm_drift: None, n_steps: None, limit: false, error: None };
    let outcome = match spec.mode {
        ScanMode::Numeric => propagate_sweep(&params, &spec.options).map(|r| {
            point.norm_drift = Some(r.norm_drift);
            point.n_steps = Some(r.n_steps);
            r.p
        }),
        ScanMode::Analytic => tlz_probability(params.m, params.nu, params.kappa, params.speed).map(|r| {
            point.limit = r.limit;
            r.value
        }),
        ScanMode::Dephased => dephased_probability_with(&params, &spec.dephasing, &spec.options),
        ScanMode::AmplitudeError => {
            amplitude_error_probability_with(&params, alpha, spec.channel, &spec.options)
        }
    };
    match outcome {
        Ok(p) => point.p = Some(p),
        Err(e) => point.error = Some(e.to_string()),
    }
    point
}

/// Runs `spec` on the global thread pool.
pub fn run_scan(spec: &ScanSpec) -> Result<ScanResult> {
    run_scan_inner(spec)
}

/// Runs `spec` on a dedicated pool of `jobs` threads.
pub fn run_scan_with_jobs(spec: &ScanSpec, jobs: usize) -> Result<ScanResult> {
    with_jobs(Some(jobs), || run_scan_inner(spec))?
}

/// Runs `f` on a dedicated pool of `jobs` threads, or on the global pool
/// when `jobs` is `None`.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let Some(jobs) = jobs else {
        return Ok(f());
    };
    if jobs == 0 {
        return Err(TlzError::InvalidScan("jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TlzError::InvalidScan(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn run_scan_inner(spec: &ScanSpec) -> Result<ScanResult> {
    spec.validate()?;
    let axis_values = spec.grid();
    let coords: Vec<Vec<f64>> = match axis_values.as_slice() {
        [a] => a.iter().map(|&x| vec![x]).collect(),
        [a, b] => a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect(),
        _ => unreachable!("validated axis count"),
    };
    let start = Instant::now();
    let points = coords.into_par_iter().map(|c| evaluate(spec, c)).collect();
    Ok(ScanResult {
        spec: spec.clone(),
        axis_values,
        points,
        version: VERSION,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PtMethod {
    Analytic,
    Numeric,
}

impl FromStr for PtMethod {
    type Err = TlzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(PtMethod::Analytic),
            "numeric" => Ok(PtMethod::Numeric),
            _ => Err(TlzError::InvalidScan(format!("unknown PT method {s:?} (analytic|numeric)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocusPoint {
    pub kappa: f64,
    /// The PT condition, or why it could not be found.
    pub result: std::result::Result<PtCondition, String>,
}

/// PT speed at each `κ∥` for the fixed `m`, `ν` and limits in `base`.
pub fn pt_locus(base: &DriveParams, kappas: &[f64], method: PtMethod) -> Vec<LocusPoint> {
    kappas
        .par_iter()
        .map(|&kappa| {
            let params = base.with_kappa(kappa);
            let result = match method {
                PtMethod::Analytic => pt_speed(params.m, params.nu, kappa),
                PtMethod::Numeric => locate_pt_speed(&params),
            };
            LocusPoint { kappa, result: result.map_err(|e| e.to_string()) }
        })
        .collect()
}

/// Renders `result` as CSV. `deterministic` drops the wall-time line.
pub fn csv_string(result: &ScanResult, deterministic: bool) -> String {
    let mut out = format!("# tlz-scan v{}\n", result.version);
    for (k, v) in result.spec.echo() {
        let _ = writeln!(out, "# {k}={v}");
    }
    if !deterministic {
        let _ = writeln!(out, "# wall_time_s={}", result.wall_time);
    }
    for (k, p) in result.points.iter().enumerate() {
        if p.limit {
            let _ = writeln!(out, "# limit row={k}");
        }
        if let Some(e) = &p.error {
            let _ = writeln!(out, "# missing row={k}: {e}");
        }
    }
    if result.points.is_empty() {
        return out;
    }
    let mut header: Vec<String> = result.spec.axes.iter().map(|a| a.param.to_string()).collect();
    header.push("P".into());
    if result.has_diagnostics() {
        header.extend(["norm_drift".into(), "n_steps".into()]);
    }
    out.push_str(&header.join(","));
    out.push('\n');
    let opt = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), fmt17);
    for p in &result.points {
        let mut row: Vec<String> = p.coords.iter().map(|&c| fmt17(c)).collect();
        row.push(opt(p.p));
        if result.has_diagnostics() {
            row.push(opt(p.norm_drift));
            row.push(p.n_steps.map_or_else(|| "NaN".to_string(), |n| n.to_string()));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn export_csv(result: &ScanResult, path: &Path, deterministic: bool) -> Result<()> {
    write_file(path, &csv_string(result, deterministic))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| TlzError::Io { path: path.to_path_buf(), source })
}

/// A parsed CSV table; `NaN` cells become `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut table = CsvTable { comments: Vec::new(), columns: Vec::new(), rows: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = line.strip_prefix('#') {
            table.comments.push(c.trim().to_string());
        } else if table.columns.is_empty() {
            table.columns = line.split(',').map(str::to_string).collect();
        } else {
            let row = line
                .split(',')
                .map(|cell| match cell.parse::<f64>() {
                    Ok(v) if v.is_nan() => Ok(None),
                    Ok(v) => Ok(Some(v)),
                    Err(_) => Err(TlzError::Config { line: i + 1, reason: format!("bad cell {cell:?}") }),
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != table.columns.len() {
                return Err(TlzError::Config { line: i + 1, reason: "wrong number of cells".into() });
            }
            table.rows.push(row);
        }
    }
    Ok(table)
}

/// CSV of a PT locus: `kappa,f_pt,p_at_pt` with failures as `NaN` rows.
pub fn locus_csv(points: &[LocusPoint], method: PtMethod, base: &DriveParams) -> String {
    let mut out = format!("# tlz-scan v{VERSION}\n");
    let name = match method {
        PtMethod::Analytic => "analytic",
        PtMethod::Numeric => "numeric",
    };
    let _ = writeln!(out, "# method={name}\n# m={}\n# nu={}", base.m, base.nu);
    for (k, p) in points.iter().enumerate() {
        if let Err(e) = &p.result {
            let _ = writeln!(out, "# missing row={k}: {e}");
        }
    }
    out.push_str("kappa,f_pt,p_at_pt\n");
    for p in points {
        let (f, v) = match &p.result {
            Ok(c) => (fmt17(c.f_pt), fmt17(c.p_at_pt)),
            Err(_) => ("NaN".into(), "NaN".into()),
        };
        let _ = writeln!(out, "{},{f},{v}", fmt17(p.kappa));
    }
    out
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;

fn viridis(v: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let w = x - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let mix = |p: f64, q: f64| (p + w * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn polyline(points: &[(f64, f64)], class: &str, stroke: &str) -> String {
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline class=\"{class}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

fn frame(out: &mut String, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64)) {
    let (pw, ph) = (SVG_W - LEFT - RIGHT, SVG_H - TOP - BOTTOM);
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        LEFT + pw / 2.0,
        SVG_H - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let _ = writeln!(out, "<text x=\"{LEFT}\" y=\"{}\" text-anchor=\"start\">{}</text>", TOP + ph + 18.0, x_range.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", LEFT + pw, TOP + ph + 18.0, x_range.1);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, TOP + ph, y_range.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, TOP + 12.0, y_range.1);
}

/// Renders `result` as a self-contained SVG document.
pub fn svg_string(result: &ScanResult) -> Result<String> {
    if result.points.is_empty() {
        return Err(TlzError::InvalidScan("nothing to plot: the scan is empty".into()));
    }
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    );
    let _ = writeln!(out, "<desc>tlz-scan v{} mode={}</desc>", result.version, result.spec.mode);
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    match result.spec.axes.as_slice() {
        [axis] => svg_1d(&mut out, result, axis),
        [a, b] => svg_2d(&mut out, result, a, b),
        _ => unreachable!("validated axis count"),
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn svg_1d(out: &mut String, result: &ScanResult, axis: &Axis) {
    let (pw, ph) = (SVG_W - LEFT - RIGHT, SVG_H - TOP - BOTTOM);
    let px = |v: f64| LEFT + axis.fraction(v) * pw;
    let py = |p: f64| TOP + (1.0 - p.clamp(0.0, 1.0)) * ph;
    frame(out, &axis.param.to_string(), "P", (axis.lo, axis.hi), (0.0, 1.0));
    let curve: Vec<(f64, f64)> = result
        .points
        .iter()
        .filter_map(|p| p.p.map(|v| (px(p.coords[0]), py(v))))
        .collect();
    out.push_str(&polyline(&curve, "scan", "#1f77b4"));

    let spec = &result.spec;
    let overlay: Vec<(f64, f64)> = match (spec.mode, axis.param) {
        (ScanMode::Analytic, _) => Vec::new(),
        (ScanMode::AmplitudeError, Param::Alpha) => result
            .points
            .iter()
            .map(|p| (px(p.coords[0]), py(rabi_probability(p.coords[0]))))
            .collect(),
        _ => result
            .points
            .iter()
            .filter_map(|p| {
                let (q, _) = point_params(spec, &p.coords);
                let v = tlz_probability(q.m, q.nu, q.kappa, q.speed).ok()?;
                (!v.limit).then(|| (px(p.coords[0]), py(v.value)))
            })
            .collect(),
    };
    if !overlay.is_empty() {
        let class = if axis.param == Param::Alpha { "rabi" } else { "analytic" };
        out.push_str(&polyline(&overlay, class, "#d62728"));
    }
}

fn svg_2d(out: &mut String, result: &ScanResult, a: &Axis, b: &Axis) {
    let (pw, ph) = (SVG_W - LEFT - RIGHT, SVG_H - TOP - BOTTOM);
    let (nx, ny) = (result.axis_values[0].len(), result.axis_values[1].len());
    let (cw, ch) = (pw / nx as f64, ph / ny as f64);
    frame(out, &a.param.to_string(), &b.param.to_string(), (a.lo, a.hi), (b.lo, b.hi));
    for (k, p) in result.points.iter().enumerate() {
        let (i, j) = (k / ny, k % ny);
        let fill = p.p.map_or_else(|| "#888888".to_string(), viridis);
        let _ = writeln!(
            out,
            "<rect class=\"cell\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{fill}\"/>",
            LEFT + i as f64 * cw,
            TOP + (ny - 1 - j) as f64 * ch,
            cw,
            ch
        );
    }
    // cell centres sit at index + 1/2
    let to_px = |axis: &Axis, n: usize, v: f64| (axis.fraction(v) * (n - 1) as f64 + 0.5) / n as f64;
    let (f_axis, k_axis, f_first) = match (a.param, b.param) {
        (Param::F, Param::Kappa) => (a, b, true),
        (Param::Kappa, Param::F) => (b, a, false),
        _ => return,
    };
    let (nf, nk) = if f_first { (nx, ny) } else { (ny, nx) };
    let base = result.spec.base;
    let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    let samples = 400;
    for s in 0..=samples {
        let kappa = k_axis.lo + (k_axis.hi - k_axis.lo) * s as f64 / samples as f64;
        let f = pt_speed(base.m, base.nu, kappa).map(|c| c.f_pt).ok();
        let inside = f.filter(|f| (f - f_axis.lo) * (f - f_axis.hi) <= 0.0);
        match inside {
            Some(f) => {
                let (u, v) = (to_px(f_axis, nf, f), to_px(k_axis, nk, kappa));
                let (x, y) = if f_first { (u, v) } else { (v, u) };
                segments.last_mut().expect("non-empty").push((LEFT + x * pw, TOP + (1.0 - y) * ph));
            }
            None => {
                if !segments.last().expect("non-empty").is_empty() {
                    segments.push(Vec::new());
                }
            }
        }
    }
    for seg in segments.iter().filter(|s| s.len() >= 2) {
        out.push_str(&polyline(seg, "pt-locus", "white"));
    }
}

pub fn export_svg(result: &ScanResult, path: &Path) -> Result<()> {
    write_file(path, &svg_string(result)?)
}
