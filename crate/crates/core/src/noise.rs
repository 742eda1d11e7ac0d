//! Quasi-static dephasing and amplitude-error robustness.
//!
//! Dephasing is a static resonance shift `f_s` added to `b_z` for a whole
//! sweep, averaged over a Gaussian line of the given FWHM. Amplitude errors
//! scale either the swept drive (`b_y`, `b_z`), the rectangular prep and
//! readout rotations, or both.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::str::FromStr;

use gauss_quad::GaussLegendre;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::analytics::{locate_pt_speed, pt_speed};
use crate::error::{Result, TlzError};
use crate::model::{fix_gauge, DriveParams};
use crate::propagator::{
    evolve, projected_probability, propagate_sweep, PropagationOptions, SpinState, SweepField,
};
use crate::pulse::prep_angles;

/// Gaussian line shape for quasi-static resonance shifts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DephasingModel {
    /// Full width at half maximum, Hz.
    pub fwhm: f64,
    /// Gauss-Legendre node count (odd, at least 11).
    pub n_nodes: usize,
    /// Integration half-width in standard deviations.
    pub span_sigmas: f64,
}

impl DephasingModel {
    pub const DEFAULT_NODES: usize = 41;
    pub const DEFAULT_SPAN: f64 = 4.0;

    pub fn new(fwhm: f64) -> Self {
        DephasingModel { fwhm, n_nodes: Self::DEFAULT_NODES, span_sigmas: Self::DEFAULT_SPAN }
    }

    pub fn with_nodes(self, n_nodes: usize) -> Self {
        DephasingModel { n_nodes, ..self }
    }

    pub fn with_span(self, span_sigmas: f64) -> Self {
        DephasingModel { span_sigmas, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm >= 0.0 && self.fwhm.is_finite()) {
            return Err(TlzError::invalid("fwhm", format!("must be >= 0, got {}", self.fwhm)));
        }
        if self.n_nodes < 11 || self.n_nodes % 2 == 0 {
            return Err(TlzError::invalid(
                "n_nodes",
                format!("must be odd and >= 11, got {}", self.n_nodes),
            ));
        }
        if !(self.span_sigmas >= 3.0 && self.span_sigmas.is_finite()) {
            return Err(TlzError::invalid(
                "span_sigmas",
                format!("must be >= 3, got {}", self.span_sigmas),
            ));
        }
        Ok(())
    }

    /// Standard deviation `fwhm / (2√(2 ln 2))`, Hz.
    pub fn sigma(&self) -> f64 {
        self.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Shifts `f_s` and their normalised weights, in node order.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        if self.fwhm == 0.0 {
            return Ok(vec![(0.0, 1.0)]);
        }
        let sigma = self.sigma();
        let half = self.span_sigmas * sigma;
        let n = NonZeroUsize::new(self.n_nodes).expect("validated node count");
        let rule = GaussLegendre::new(n);
        let raw: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| {
                let f = half * x;
                (f, w * (-0.5 * (f / sigma).powi(2)).exp())
            })
            .collect();
        let total: f64 = raw.iter().map(|&(_, w)| w).sum();
        Ok(raw.into_iter().map(|(f, w)| (f, w / total)).collect())
    }
}

/// Line-broadened probability `∫ρ(f_s) P(f_s) df_s`.
///
/// `T` is resolved once from `params`; the shift only perturbs the sweep,
/// never the prep or projection states.
pub fn dephased_probability(params: &DriveParams, model: &DephasingModel) -> Result<f64> {
    dephased_probability_with(params, model, &PropagationOptions::default())
}

/// [`dephased_probability`] with explicit propagation options.
pub fn dephased_probability_with(
    params: &DriveParams,
    model: &DephasingModel,
    opts: &PropagationOptions,
) -> Result<f64> {
    let nodes = model.nodes()?;
    let params = params.resolved()?;
    let values = nodes
        .par_iter()
        .map(|&(f, _)| Ok(propagate_sweep(&params, &opts.with_bz_offset(opts.bz_offset + f))?.p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().zip(&nodes).map(|(p, (_, w))| p * w).sum())
}

/// Where an amplitude error is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    /// The swept drive: `b_y` and `b_z` scaled by `α`.
    Drive,
    /// The rectangular prep and readout rotations: `θ → αθ`.
    Prep,
    Both,
}

impl FromStr for Channel {
    type Err = TlzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drive" => Ok(Channel::Drive),
            "prep" => Ok(Channel::Prep),
            "both" => Ok(Channel::Both),
            _ => Err(TlzError::invalid("channel", format!("expected drive|prep|both, got {s:?}"))),
        }
    }
}

/// Rotation by `theta` about the in-plane axis `(−sin Φ, cos Φ, 0)`, applied
/// to `(a0, a1)`.
fn rotate(theta: f64, azimuth: f64, v: [C64; 2]) -> [C64; 2] {
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let e = C64::from_polar(1.0, azimuth);
    [c * v[0] - s * e.conj() * v[1], s * e * v[0] + c * v[1]]
}

fn rotate_back(theta: f64, azimuth: f64, v: [C64; 2]) -> [C64; 2] {
    rotate(-theta, azimuth, v)
}

/// Tunneling probability with amplitude error `alpha` on `channel`.
///
/// `T` is pinned to the error-free value resolved from `params`. The prep
/// channel models the experiment's rectangular pulses: the initial state is
/// `|↓⟩` rotated by `αθ_i` towards the lower eigenstate, and readout undoes
/// an `αθ_f` rotation before measuring `|↑⟩`.
pub fn amplitude_error_probability(params: &DriveParams, alpha: f64, channel: Channel) -> Result<f64> {
    amplitude_error_probability_with(params, alpha, channel, &PropagationOptions::default())
}

/// [`amplitude_error_probability`] with explicit propagation options.
pub fn amplitude_error_probability_with(
    params: &DriveParams,
    alpha: f64,
    channel: Channel,
    opts: &PropagationOptions,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TlzError::invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    let params = params.resolved()?;
    let drive_scale = match channel {
        Channel::Drive | Channel::Both => alpha,
        Channel::Prep => 1.0,
    };
    let opts = opts.with_drive_amp_scale(opts.drive_amp_scale * drive_scale);
    if channel == Channel::Drive {
        return Ok(propagate_sweep(&params, &opts)?.p);
    }
    if params.speed == 0.0 {
        return Err(TlzError::ZeroSpeed);
    }
    let angles = prep_angles(&params)?.with_amplitude_error(alpha);
    let field = SweepField {
        bz_offset: opts.bz_offset,
        drive_amp_scale: opts.drive_amp_scale,
        ..SweepField::ideal(&params)?
    };
    let duration = field.duration;
    let start = params.field_at_coordinate(params.coordinate(0.0, duration));
    let end = params.field_at_coordinate(params.coordinate(duration, duration));
    let (az_i, az_f) = (start.by.atan2(start.bx), end.by.atan2(end.bx));

    let down = [C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
    // the global phase is irrelevant; matching the eigenvector gauge keeps
    // the stepper on the same path as the error-free sweep
    let initial = SpinState::from_amplitudes(fix_gauge(rotate(angles.theta_i, az_i, down)));
    let ev = evolve(&field, duration, 0.0, duration, initial, &opts)?;
    let drift = (ev.state.norm_sqr() - 1.0).abs();
    if drift > opts.max_norm_drift {
        return Err(TlzError::NormDrift { drift, allowed: opts.max_norm_drift });
    }
    let read = SpinState::from_amplitudes(rotate_back(angles.theta_f, az_f, ev.state.amplitudes()));
    let up = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    Ok(projected_probability(&read, &up, &down))
}

/// Resonant rectangular π-pulse transfer `½(1 − cos απ)` for `α ≥ 0`.
pub fn rabi_probability(alpha: f64) -> f64 {
    0.5 * (1.0 - (alpha * PI).cos())
}

/// Control scheme whose amplitude-error robustness is being measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RobustnessMethod {
    Rabi,
    /// A TLZ sweep with the duration pinned by the caller (or resolved once).
    Tlz { params: DriveParams, channel: Channel, options: PropagationOptions },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Rabi,
    Tlz,
}

impl RobustnessMethod {
    /// TLZ method with [`robustness_options`].
    pub fn tlz(params: DriveParams, channel: Channel) -> Self {
        RobustnessMethod::Tlz { params, channel, options: robustness_options() }
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            RobustnessMethod::Rabi => MethodKind::Rabi,
            RobustnessMethod::Tlz { .. } => MethodKind::Tlz,
        }
    }

    pub fn probability(&self, alpha: f64) -> Result<f64> {
        match self {
            RobustnessMethod::Rabi => Ok(rabi_probability(alpha)),
            RobustnessMethod::Tlz { params, channel, options } => {
                amplitude_error_probability_with(params, alpha, *channel, options)
            }
        }
    }

    fn pinned(&self) -> Result<Self> {
        Ok(match self {
            RobustnessMethod::Tlz { params, channel, options } => {
                RobustnessMethod::Tlz { params: params.resolved()?, channel: *channel, options: *options }
            }
            RobustnessMethod::Rabi => RobustnessMethod::Rabi,
        })
    }
}

/// An α-range over which the transfer stays at or above `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessInterval {
    pub method: MethodKind,
    pub threshold: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
}

impl RobustnessInterval {
    pub fn width(&self) -> f64 {
        self.alpha_hi - self.alpha_lo
    }

    pub fn contains(&self, alpha: f64) -> bool {
        self.alpha_lo <= alpha && alpha <= self.alpha_hi
    }
}

/// Bisection resolution for interval endpoints.
pub const ALPHA_TOL: f64 = 1e-3;

/// `n` evenly spaced α values over `[lo, hi]`.
pub fn alpha_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// The default α grid `0.5, 0.55, …, 4`.
pub fn default_alpha_grid() -> Vec<f64> {
    alpha_grid(0.5, 4.0, 71)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(TlzError::invalid("threshold", format!("must lie in (0, 1), got {threshold}")))
    }
}

fn sorted_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(TlzError::invalid("alpha grid", "is empty"));
    }
    if let Some(a) = grid.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(TlzError::invalid("alpha grid", format!("values must be > 0, got {a}")));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Bisects between a passing and a failing α.
fn refine_edge(method: &RobustnessMethod, threshold: f64, mut pass: f64, mut fail: f64) -> Result<f64> {
    while (pass - fail).abs() > ALPHA_TOL {
        let mid = 0.5 * (pass + fail);
        if method.probability(mid)? >= threshold {
            pass = mid;
        } else {
            fail = mid;
        }
    }
    Ok(0.5 * (pass + fail))
}

fn evaluate(method: &RobustnessMethod, grid: &[f64]) -> Result<Vec<f64>> {
    grid.par_iter().map(|&a| method.probability(a)).collect()
}

/// Refines the grid run `[i, j]` (inclusive) into an interval.
fn refine_run(
    method: &RobustnessMethod,
    threshold: f64,
    grid: &[f64],
    i: usize,
    j: usize,
) -> Result<RobustnessInterval> {
    let alpha_lo = if i > 0 { refine_edge(method, threshold, grid[i], grid[i - 1])? } else { grid[i] };
    let alpha_hi = if j + 1 < grid.len() {
        refine_edge(method, threshold, grid[j], grid[j + 1])?
    } else {
        grid[j]
    };
    Ok(RobustnessInterval { method: method.kind(), threshold, alpha_lo, alpha_hi })
}

/// Maximal contiguous α-interval containing `α = 1` with probability at or
/// above `threshold`.
///
/// `None` when the error-free point itself misses the threshold. Endpoints
/// not bracketed by a failing grid point are clipped to the grid.
pub fn robustness_interval(
    method: &RobustnessMethod,
    threshold: f64,
    grid: &[f64],
) -> Result<Option<RobustnessInterval>> {
    check_threshold(threshold)?;
    let method = method.pinned()?;
    let mut grid = sorted_grid(grid)?;
    if !grid.contains(&1.0) {
        let k = grid.partition_point(|&a| a < 1.0);
        grid.insert(k, 1.0);
    }
    let values = evaluate(&method, &grid)?;
    let centre = grid.iter().position(|&a| a == 1.0).expect("grid holds 1");
    if values[centre] < threshold {
        return Ok(None);
    }
    let mut i = centre;
    while i > 0 && values[i - 1] >= threshold {
        i -= 1;
    }
    let mut j = centre;
    while j + 1 < grid.len() && values[j + 1] >= threshold {
        j += 1;
    }
    refine_run(&method, threshold, &grid, i, j).map(Some)
}

/// Widest contiguous α-interval anywhere on the grid with probability at or
/// above `threshold`, whether or not it contains `α = 1`.
pub fn widest_interval(
    method: &RobustnessMethod,
    threshold: f64,
    grid: &[f64],
) -> Result<Option<RobustnessInterval>> {
    check_threshold(threshold)?;
    let method = method.pinned()?;
    let grid = sorted_grid(grid)?;
    let values = evaluate(&method, &grid)?;
    let mut best: Option<RobustnessInterval> = None;
    let mut k = 0;
    while k < grid.len() {
        if values[k] < threshold {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < grid.len() && values[k + 1] >= threshold {
            k += 1;
        }
        let run = refine_run(&method, threshold, &grid, start, k)?;
        if best.is_none_or(|b| run.width() > b.width()) {
            best = Some(run);
        }
        k += 1;
    }
    Ok(best)
}

/// Propagation options for α scans: one decade tighter than the defaults,
/// since fields scaled up to 4× over microsecond sweeps otherwise exceed the
/// norm-drift guard.
pub fn robustness_options() -> PropagationOptions {
    PropagationOptions::default().with_tolerance(1e-11, 1e-13)
}

/// Gap used for robustness runs, Hz.
pub const ROBUSTNESS_GAP: f64 = 0.5e6;
/// Slope used for robustness runs, Hz².
pub const ROBUSTNESS_SLOPE: f64 = 1e14;

/// Sweep for an amplitude-robustness study at dimensionless twist `m·κ∥`.
///
/// `κ∥ = mκ/m`, `F` maximises the simulated error-free probability (searched
/// from the analytic PT speed outwards) and `T` is pinned to the sweep
/// duration at that speed.
pub fn robustness_setup(m_kappa: f64) -> Result<DriveParams> {
    if !(m_kappa != 0.0 && m_kappa.is_finite()) {
        return Err(TlzError::invalid("m_kappa", format!("must be nonzero, got {m_kappa}")));
    }
    let kappa = m_kappa / ROBUSTNESS_GAP;
    let f_pt = pt_speed(ROBUSTNESS_GAP, ROBUSTNESS_SLOPE, kappa)?.f_pt;
    let base = DriveParams::new(ROBUSTNESS_GAP, ROBUSTNESS_SLOPE, kappa, f_pt);
    let pt = locate_pt_speed(&base)?;
    base.with_speed(pt.f_pt).resolved()
}
