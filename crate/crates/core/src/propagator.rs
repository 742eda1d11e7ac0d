//! Time-dependent Schrödinger propagation of the swept two-level system.
//!
//! The state obeys `i dψ/dt = 2π (b(t)·S) ψ` with `b` in Hz. Integration runs
//! in the dimensionless time `τ = t/T` so that the adaptive stepper sees
//! O(1) interval lengths regardless of the microsecond-scale sweep.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use ode_solvers::{Dop853, OutputType, System, Vector5};

use crate::error::{Result, TlzError};
use crate::model::{instantaneous_eigensystem, Amplitudes, DriveParams, FieldVector};

/// Anything that can report the drive field at lab time `t`.
pub trait DriveField: Sync {
    fn field(&self, t: f64) -> FieldVector;
}

impl<F: Fn(f64) -> FieldVector + Sync> DriveField for F {
    fn field(&self, t: f64) -> FieldVector {
        self(t)
    }
}

/// The quadratic sweep, optionally perturbed by a static `b_z` offset and a
/// drive-amplitude error `α` applied to `b_y` and `b_z`.
#[derive(Clone, Copy, Debug)]
pub struct SweepField {
    pub params: DriveParams,
    pub duration: f64,
    pub bz_offset: f64,
    pub drive_amp_scale: f64,
}

impl SweepField {
    pub fn ideal(params: &DriveParams) -> Result<Self> {
        Ok(SweepField {
            params: *params,
            duration: params.resolved_duration()?,
            bz_offset: 0.0,
            drive_amp_scale: 1.0,
        })
    }
}

impl DriveField for SweepField {
    fn field(&self, t: f64) -> FieldVector {
        let b = self.params.field_at_coordinate(self.params.coordinate(t, self.duration));
        FieldVector {
            bx: b.bx,
            by: self.drive_amp_scale * b.by,
            bz: self.drive_amp_scale * b.bz + self.bz_offset,
        }
    }
}

/// Pure spin-½ state in the fixed computational basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinState {
    pub a0: C64,
    pub a1: C64,
}

impl SpinState {
    pub fn new(a0: C64, a1: C64) -> Self {
        SpinState { a0, a1 }
    }

    pub fn from_amplitudes(v: Amplitudes) -> Self {
        SpinState { a0: v[0], a1: v[1] }
    }

    pub fn amplitudes(&self) -> Amplitudes {
        [self.a0, self.a1]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.a0.norm_sqr() + self.a1.norm_sqr()
    }

    /// `⟨other|self⟩`
    pub fn overlap(&self, other: &Amplitudes) -> C64 {
        other[0].conj() * self.a0 + other[1].conj() * self.a1
    }

    /// `(⟨2Sx⟩, ⟨2Sy⟩, ⟨2Sz⟩)` = `⟨σ⟩`.
    pub fn bloch(&self) -> [f64; 3] {
        let c = self.a0.conj() * self.a1;
        [2.0 * c.re, 2.0 * c.im, self.a0.norm_sqr() - self.a1.norm_sqr()]
    }

    fn to_vector(self, tau: f64) -> Vector5<f64> {
        Vector5::new(self.a0.re, self.a0.im, self.a1.re, self.a1.im, tau)
    }

    fn from_vector(y: &Vector5<f64>) -> Self {
        SpinState { a0: C64::new(y[0], y[1]), a1: C64::new(y[2], y[3]) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step in seconds; `None` means `T/1000`.
    pub max_step: Option<f64>,
    /// Static resonance shift added to `b_z` during the sweep, Hz.
    pub bz_offset: f64,
    /// Amplitude error `α` on `b_y` and `b_z` during the sweep.
    pub drive_amp_scale: f64,
    /// Step budget per integration.
    pub max_steps: u32,
    /// Largest accepted `|‖ψ(T)‖² − 1|`.
    pub max_norm_drift: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: None,
            bz_offset: 0.0,
            drive_amp_scale: 1.0,
            max_steps: 2_000_000,
            max_norm_drift: 1e-9,
        }
    }
}

impl PropagationOptions {
    pub fn with_tolerance(self, rel_tol: f64, abs_tol: f64) -> Self {
        PropagationOptions { rel_tol, abs_tol, ..self }
    }

    pub fn with_bz_offset(self, bz_offset: f64) -> Self {
        PropagationOptions { bz_offset, ..self }
    }

    pub fn with_drive_amp_scale(self, drive_amp_scale: f64) -> Self {
        PropagationOptions { drive_amp_scale, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(TlzError::invalid("rel_tol/abs_tol", "tolerances must be positive"));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(TlzError::invalid("max_step", format!("must be positive, got {h}")));
            }
        }
        if !(self.drive_amp_scale > 0.0 && self.drive_amp_scale.is_finite()) {
            return Err(TlzError::invalid(
                "drive_amp_scale",
                format!("must be positive, got {}", self.drive_amp_scale),
            ));
        }
        if !self.bz_offset.is_finite() {
            return Err(TlzError::invalid("bz_offset", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepResult {
    /// Tunneling probability `|⟨2(q=−FT/2)|ψ(T)⟩|²`.
    pub p: f64,
    pub final_state: SpinState,
    pub norm_drift: f64,
    pub n_steps: u32,
}

/// Outcome of integrating a state over a time window.
#[derive(Clone, Copy, Debug)]
pub struct Evolution {
    pub state: SpinState,
    pub n_steps: u32,
}

struct Schrodinger<'a, D: ?Sized> {
    field: &'a D,
    duration: f64,
}

// τ rides along as a fifth component with dτ/dτ = 1. ode_solvers 0.6 places
// the last DOP853 stage at the step start (c₁₂ = 0 in its tableau), so the
// explicit time argument is wrong there; the state copy of τ is not.
impl<D: DriveField + ?Sized> System<f64, Vector5<f64>> for Schrodinger<'_, D> {
    // dψ/dτ = −i·2π·T·(b·S)ψ = −i·π·T·(b·σ)ψ
    fn system(&self, _: f64, y: &Vector5<f64>, dy: &mut Vector5<f64>) {
        let b = self.field.field(y[4] * self.duration);
        let w = PI * self.duration;
        let (x0, y0, x1, y1) = (y[0], y[1], y[2], y[3]);
        // (b·σ)ψ, real and imaginary parts
        let h0r = b.bz * x0 + b.bx * x1 + b.by * y1;
        let h0i = b.bz * y0 + b.bx * y1 - b.by * x1;
        let h1r = b.bx * x0 - b.by * y0 - b.bz * x1;
        let h1i = b.bx * y0 + b.by * x0 - b.bz * y1;
        dy[0] = w * h0i;
        dy[1] = -w * h0r;
        dy[2] = w * h1i;
        dy[3] = -w * h1r;
        dy[4] = 1.0;
    }
}

/// Integrates `state` from `t0` to `t1` under `field`; `duration` is the full
/// sweep length used to normalise time.
pub fn evolve<D: DriveField + ?Sized>(
    field: &D,
    duration: f64,
    t0: f64,
    t1: f64,
    state: SpinState,
    opts: &PropagationOptions,
) -> Result<Evolution> {
    opts.validate()?;
    if !(duration > 0.0) {
        return Err(TlzError::invalid("T", format!("must be positive, got {duration}")));
    }
    if t1 <= t0 {
        return Ok(Evolution { state, n_steps: 0 });
    }
    let (tau0, tau1) = (t0 / duration, t1 / duration);
    let h_max = opts.max_step.map_or(1e-3, |h| h / duration).min(tau1 - tau0);
    let system = Schrodinger { field, duration };
    let mut stepper = Dop853::from_param(
        system,
        tau0,
        tau1,
        0.0,
        state.to_vector(tau0),
        opts.rel_tol,
        opts.abs_tol,
        0.9,
        0.0,
        0.333,
        6.0,
        h_max,
        0.0,
        opts.max_steps,
        u32::MAX,
        OutputType::Sparse,
    );
    let stats = stepper
        .integrate()
        .map_err(|e| TlzError::Integration(e.to_string()))?;
    let y = stepper
        .y_out()
        .last()
        .ok_or_else(|| TlzError::Integration("solver produced no output".into()))?;
    Ok(Evolution { state: SpinState::from_vector(y), n_steps: stats.accepted_steps })
}

/// Squared overlap with `target`, normalised over the orthonormal pair
/// `(other, target)`; never exceeds 1 in floating point.
pub(crate) fn projected_probability(state: &SpinState, target: &Amplitudes, other: &Amplitudes) -> f64 {
    let hit = state.overlap(target).norm_sqr();
    let miss = state.overlap(other).norm_sqr();
    let total = hit + miss;
    if total > 0.0 {
        hit / total
    } else {
        0.0
    }
}

/// Sweeps from `|1(q=FT/2)⟩` and projects onto `|2(q=−FT/2)⟩`, both taken
/// from the ideal (unscaled, offset-free) endpoint fields.
pub fn propagate_sweep(params: &DriveParams, opts: &PropagationOptions) -> Result<SweepResult> {
    let field = SweepField {
        bz_offset: opts.bz_offset,
        drive_amp_scale: opts.drive_amp_scale,
        ..SweepField::ideal(params)?
    };
    let (initial, target) = ideal_endpoints(params)?;
    propagate_between(&field, field.duration, initial, &target, opts)
}

/// Ideal initial state and the ideal final eigensystem.
pub fn ideal_endpoints(params: &DriveParams) -> Result<(SpinState, crate::model::EigenSystem)> {
    params.validate()?;
    if params.speed == 0.0 {
        return Err(TlzError::ZeroSpeed);
    }
    let duration = params.resolved_duration()?;
    let ideal = SweepField::ideal(params)?;
    let start = instantaneous_eigensystem(&ideal.field(0.0))?;
    let end = instantaneous_eigensystem(&ideal.field(duration))?;
    Ok((SpinState::from_amplitudes(start.v1), end))
}

/// Evolves `initial` across the full window and projects onto the upper
/// state of `target`.
pub fn propagate_between<D: DriveField + ?Sized>(
    field: &D,
    duration: f64,
    initial: SpinState,
    target: &crate::model::EigenSystem,
    opts: &PropagationOptions,
) -> Result<SweepResult> {
    let ev = evolve(field, duration, 0.0, duration, initial, opts)?;
    let norm_drift = (ev.state.norm_sqr() - 1.0).abs();
    if norm_drift > opts.max_norm_drift {
        return Err(TlzError::NormDrift { drift: norm_drift, allowed: opts.max_norm_drift });
    }
    Ok(SweepResult {
        p: projected_probability(&ev.state, &target.v2, &target.v1),
        final_state: ev.state,
        norm_drift,
        n_steps: ev.n_steps,
    })
}

/// Tunneling probability with default tolerances; `T` follows
/// [`crate::model::sweep_duration`] unless pinned.
pub fn tunneling_probability(params: &DriveParams) -> Result<f64> {
    Ok(propagate_sweep(params, &PropagationOptions::default())?.p)
}

/// One sample of a sweep trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub bloch: [f64; 3],
    pub field: FieldVector,
}

/// Bloch vector and field at `n_samples` uniformly spaced times in `[0, T]`.
pub fn trajectory(params: &DriveParams, n_samples: usize) -> Result<Vec<TrajectoryPoint>> {
    if n_samples < 2 {
        return Err(TlzError::invalid("n_samples", format!("need at least 2, got {n_samples}")));
    }
    let (mut state, _) = ideal_endpoints(params)?;
    let field = SweepField::ideal(params)?;
    let duration = field.duration;
    let opts = PropagationOptions::default();
    let mut out = Vec::with_capacity(n_samples);
    let mut t_prev = 0.0;
    for k in 0..n_samples {
        let t = if k + 1 == n_samples { duration } else { duration * k as f64 / (n_samples - 1) as f64 };
        state = evolve(&field, duration, t_prev, t, state, &opts)?.state;
        out.push(TrajectoryPoint { t, bloch: state.bloch(), field: field.field(t) });
        t_prev = t;
    }
    Ok(out)
}
