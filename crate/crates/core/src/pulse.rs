//! Rotating-frame drive synthesis.
//!
//! In the rotating frame the drive is
//! `b = (f_R cos φ, −f_R sin φ, d(f_det·t)/dt)`, so a sweep is realised by
//!
//! * Rabi amplitude `f_R = sqrt(b_x² + b_y²)`,
//! * phase `φ = −atan2(b_y, b_x)`, unwrapped along the sweep,
//! * accumulated detuning phase `f_det·t = ∫₀ᵗ b_z dt'`.
//!
//! The last channel has the closed form
//! `(κν²F²/6)·[(t − T/2)³ + (T/2)³]`, which is evaluated in factored form so
//! that the per-sample detuning `f_det` has no `0/0` at `t = 0`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, TlzError};
use crate::model::{DriveParams, FieldVector};
use crate::propagator::DriveField;

/// Fewest samples a synthesized sweep may have.
pub const MIN_SAMPLES_PER_SWEEP: usize = 100;
/// Physical length of the rectangular prep/readout pulses, seconds.
pub const PREP_PULSE_DURATION: f64 = 130e-9;
/// Relative slack granted to hardware limits in [`verify_constraints`].
pub const CONSTRAINT_SLACK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseSample {
    /// Time, seconds.
    pub t: f64,
    /// Rabi frequency `f_R`, Hz.
    pub rabi: f64,
    /// Microwave phase `φ_mw`, rad (unwrapped).
    pub phase: f64,
    /// Detuning `f_det`, Hz.
    pub detuning: f64,
    /// Accumulated detuning phase `f_det·t` in cycles.
    pub detuning_phase: f64,
}

/// Rotation angles of the rectangular prep and readout pulses, rad.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepAngles {
    pub theta_i: f64,
    pub phi_i: f64,
    pub theta_f: f64,
    pub phi_f: f64,
}

impl PrepAngles {
    /// Both polar angles scaled by `alpha`; azimuths are unchanged.
    pub fn with_amplitude_error(self, alpha: f64) -> Self {
        PrepAngles { theta_i: alpha * self.theta_i, theta_f: alpha * self.theta_f, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub limit: f64,
    pub observed_max: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseProgram {
    /// Effective sample rate `(n − 1)/T`, Hz.
    pub sample_rate: f64,
    pub duration: f64,
    pub samples: Vec<PulseSample>,
    pub prep: PrepAngles,
    pub prep_duration: f64,
    pub constraint_report: Vec<ConstraintCheck>,
}

impl PulseProgram {
    pub fn passes_constraints(&self) -> bool {
        self.constraint_report.iter().all(|c| c.pass)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Closed-form `∫₀ᵗ b_z dt'` divided by `t`, i.e. `f_det(t)`.
fn detuning_at(params: &DriveParams, duration: f64, t: f64) -> f64 {
    // (a³ + b³)/t with a = t − T/2, b = T/2 and a + b = t
    let (a, b) = (t - 0.5 * duration, 0.5 * duration);
    let f = params.speed;
    params.kappa * params.nu * params.nu * f * f / 6.0 * (a * a - a * b + b * b)
}

/// Synthesizes the rotating-frame waveform for `params`.
///
/// Samples are uniform over `[0, T]` with at least `sample_rate` per second.
/// For a closed gap (`m = 0`) the sample count is chosen so that no sample
/// lands on `q = 0`, where the field and hence the phase vanish.
pub fn synthesize_drive(params: &DriveParams, sample_rate: f64) -> Result<PulseProgram> {
    params.validate()?;
    if params.speed == 0.0 {
        return Err(TlzError::ZeroSpeed);
    }
    let duration = params.resolved_duration()?;
    let wanted = sample_rate * duration;
    if !(wanted >= MIN_SAMPLES_PER_SWEEP as f64) {
        return Err(TlzError::SampleRateTooLow { rate: sample_rate, min: MIN_SAMPLES_PER_SWEEP });
    }
    let mut intervals = wanted.ceil() as usize;
    if params.m == 0.0 && intervals % 2 == 0 {
        intervals += 1;
    }
    let dt = duration / intervals as f64;

    let mut samples = Vec::with_capacity(intervals + 1);
    let mut prev_phase: Option<f64> = None;
    for k in 0..=intervals {
        let t = if k == intervals { duration } else { k as f64 * dt };
        let b = params.field_at_coordinate(params.coordinate(t, duration));
        let raw = -b.by.atan2(b.bx);
        let phase = match prev_phase {
            Some(p) => p + wrap_angle(raw - p),
            None => raw,
        };
        prev_phase = Some(phase);
        let detuning = detuning_at(params, duration, t);
        samples.push(PulseSample {
            t,
            rabi: b.bx.hypot(b.by),
            phase,
            detuning,
            detuning_phase: detuning * t,
        });
    }

    let prep = prep_angles(params)?;

    let mut prog = PulseProgram {
        sample_rate: intervals as f64 / duration,
        duration,
        samples,
        prep,
        prep_duration: PREP_PULSE_DURATION,
        constraint_report: Vec::new(),
    };
    prog.constraint_report = verify_constraints(&prog, params);
    Ok(prog)
}

/// Prep and readout rotation angles for the ideal endpoint fields.
pub fn prep_angles(params: &DriveParams) -> Result<PrepAngles> {
    params.validate()?;
    let duration = params.resolved_duration()?;
    let start = params.field_at_coordinate(params.coordinate(0.0, duration));
    let end = params.field_at_coordinate(params.coordinate(duration, duration));
    for b in [start, end] {
        if b.norm() == 0.0 {
            return Err(TlzError::DegenerateField);
        }
    }
    let end_phase = detuning_at(params, duration, duration) * duration;
    Ok(PrepAngles {
        theta_i: (start.bz / start.norm()).clamp(-1.0, 1.0).acos(),
        phi_i: wrap_angle(-(0.5 * PI + start.by.atan2(start.bx))),
        theta_f: (end.bz / end.norm()).clamp(-1.0, 1.0).acos(),
        phi_f: wrap_angle(TAU * end_phase - (-0.5 * PI + end.by.atan2(end.bx))),
    })
}

/// Checks peak Rabi frequency, peak detuning and duration against the
/// hardware limits in `params`.
pub fn verify_constraints(prog: &PulseProgram, params: &DriveParams) -> Vec<ConstraintCheck> {
    let peak = |f: fn(&PulseSample) -> f64| prog.samples.iter().map(f).fold(0.0, f64::max);
    let check = |name, limit: f64, observed_max: f64| ConstraintCheck {
        name,
        limit,
        observed_max,
        pass: observed_max <= limit * (1.0 + CONSTRAINT_SLACK),
    };
    let l = &params.limits;
    vec![
        check("rabi", l.f_r_max, peak(|s| s.rabi.abs())),
        check("detuning", l.f_det_max, peak(|s| s.detuning.abs())),
        check("duration", l.t_cap, prog.duration),
    ]
}

/// Copy of `prog` with both prep rotation angles scaled by `alpha`
/// (amplitude error of a fixed-length rectangular pulse).
pub fn prep_rotation_error(prog: &PulseProgram, alpha: f64) -> PulseProgram {
    PulseProgram { prep: prog.prep.with_amplitude_error(alpha), ..prog.clone() }
}

/// First-derivative weights at `z` for the nodes `xs` (Fornberg's recursion).
fn derivative_weights(z: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    // c[j] = [weight for 0th derivative, weight for 1st derivative]
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|w| w[1]).collect()
}

/// Inverts the waveform back to the drive field at every sample.
///
/// `b_z` is the numerical derivative of the stored `f_det·t` using 5-point
/// stencils (centred in the interior, one-sided near the ends).
pub fn reconstruct_field(prog: &PulseProgram) -> Result<Vec<FieldVector>> {
    let s = &prog.samples;
    if s.len() < 2 {
        return Err(TlzError::TooFewSamples { min: 2, got: s.len() });
    }
    if let Some(k) = s.windows(2).position(|w| !(w[1].t > w[0].t)) {
        return Err(TlzError::NonMonotoneTime { index: k + 1 });
    }
    let width = s.len().min(5);
    let out = (0..s.len())
        .map(|i| {
            let start = i.saturating_sub(width / 2).min(s.len() - width);
            let window = &s[start..start + width];
            let xs: Vec<f64> = window.iter().map(|w| w.t - s[i].t).collect();
            let bz = derivative_weights(0.0, &xs)
                .iter()
                .zip(window)
                .map(|(w, smp)| w * smp.detuning_phase)
                .sum();
            FieldVector {
                bx: s[i].rabi * s[i].phase.cos(),
                by: -s[i].rabi * s[i].phase.sin(),
                bz,
            }
        })
        .collect();
    Ok(out)
}

/// Piecewise-linear field through sampled points, for propagating a
/// reconstructed waveform.
#[derive(Clone, Debug)]
pub struct SampledField {
    times: Vec<f64>,
    fields: Vec<FieldVector>,
}

impl SampledField {
    pub fn new(times: Vec<f64>, fields: Vec<FieldVector>) -> Result<Self> {
        if times.len() != fields.len() || times.len() < 2 {
            return Err(TlzError::TooFewSamples { min: 2, got: times.len().min(fields.len()) });
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(TlzError::NonMonotoneTime { index: k + 1 });
        }
        Ok(SampledField { times, fields })
    }

    pub fn from_program(prog: &PulseProgram) -> Result<Self> {
        let fields = reconstruct_field(prog)?;
        SampledField::new(prog.samples.iter().map(|s| s.t).collect(), fields)
    }
}

impl DriveField for SampledField {
    fn field(&self, t: f64) -> FieldVector {
        let n = self.times.len();
        let k = self.times.partition_point(|&x| x <= t).clamp(1, n - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let (a, b) = (self.fields[k - 1], self.fields[k]);
        FieldVector {
            bx: a.bx + w * (b.bx - a.bx),
            by: a.by + w * (b.by - a.by),
            bz: a.bz + w * (b.bz - a.bz),
        }
    }
}

/// Column set of an exported waveform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveformColumns {
    /// `t_s,f_R_Hz,phi_rad,f_det_Hz`
    Polar,
    /// `t_s,I_Hz,Q_Hz,f_det_Hz` with `I = f_R cos φ`, `Q = f_R sin φ`.
    Iq,
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn waveform_csv(prog: &PulseProgram, columns: WaveformColumns) -> String {
    let mut out = String::new();
    out.push_str(match columns {
        WaveformColumns::Polar => "t_s,f_R_Hz,phi_rad,f_det_Hz\n",
        WaveformColumns::Iq => "t_s,I_Hz,Q_Hz,f_det_Hz\n",
    });
    for s in &prog.samples {
        let (a, b) = match columns {
            WaveformColumns::Polar => (s.rabi, s.phase),
            WaveformColumns::Iq => (s.rabi * s.phase.cos(), s.rabi * s.phase.sin()),
        };
        let _ = writeln!(out, "{},{},{},{}", fmt17(s.t), fmt17(a), fmt17(b), fmt17(s.detuning));
    }
    out
}

pub fn write_waveform_csv(prog: &PulseProgram, columns: WaveformColumns, path: &Path) -> Result<()> {
    std::fs::write(path, waveform_csv(prog, columns))
        .map_err(|source| TlzError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{field_at, sweep_duration};
    use approx::assert_relative_eq;

    fn reference_sweep() -> DriveParams {
        DriveParams::new(0.5e6, 1e14, 0.2e-6, -0.3142).with_duration(0.866e-6)
    }

    #[test]
    fn midpoint_sample_is_pure_gap() {
        let p = reference_sweep();
        let prog = synthesize_drive(&p, 1e9).unwrap();
        // 866 intervals: the midpoint is sample 433
        let mid = prog.samples[433];
        assert_relative_eq!(mid.t, 0.433e-6, max_relative = 1e-12);
        assert_relative_eq!(mid.rabi, 0.5e6, max_relative = 1e-12);
        assert!(mid.phase.abs() < 1e-12);
        let b = reconstruct_field(&prog).unwrap();
        assert!(b[433].bz.abs() < 1e-3);
    }

    #[test]
    fn initial_rabi_amplitude() {
        let prog = synthesize_drive(&reference_sweep(), 1e9).unwrap();
        // 40-digit evaluation: sqrt(0.5e6² + 1.3604860e7²)
        assert_relative_eq!(prog.samples[0].rabi, 13_614_044.792_771_91, max_relative = 1e-12);
    }

    #[test]
    fn accumulated_detuning_at_end() {
        let prog = synthesize_drive(&reference_sweep(), 1e9).unwrap();
        let last = prog.samples.last().unwrap();
        assert_eq!(last.t, 0.866e-6);
        // 40-digit evaluation of κν²F²/6·2·(T/2)³
        assert_relative_eq!(last.detuning_phase, 5.342_995_290_885_786_7, max_relative = 1e-12);
        // f_det(0) is the b_z(0) limit
        let b0 = field_at(&reference_sweep(), 0.0).unwrap();
        assert_relative_eq!(prog.samples[0].detuning, b0.bz, max_relative = 1e-12);
        assert_eq!(prog.samples[0].detuning_phase, 0.0);
    }

    #[test]
    fn phase_is_continuous() {
        for (m, k, f) in [(0.5e6, 0.2e-6, -0.3142), (0.0, 2.5e-6, 0.05), (2e6, -1.4e-6, 0.4)] {
            let p = DriveParams::new(m, 1e14, k, f);
            let t = p.resolved_duration().unwrap();
            let prog = synthesize_drive(&p, 1000.0 / t).unwrap();
            for w in prog.samples.windows(2) {
                // a closed gap flips the field through the origin: a π jump
                let jump = (w[1].phase - w[0].phase).abs();
                assert!(jump < PI || (m == 0.0 && (jump - PI).abs() < 1e-12), "{jump}");
                assert!(w[0].rabi >= 0.0);
            }
        }
    }

    #[test]
    fn gapless_synthesis_skips_midpoint() {
        let p = DriveParams::new(0.0, 1e14, 0.0, 0.3).with_duration(1e-6);
        let prog = synthesize_drive(&p, 1e8).unwrap();
        assert_eq!(prog.samples.len() % 2, 0);
        assert!(prog.samples.iter().all(|s| s.rabi > 0.0 && s.phase.is_finite()));
    }

    #[test]
    fn sample_rate_too_low() {
        let p = reference_sweep();
        assert!(matches!(synthesize_drive(&p, 1e7), Err(TlzError::SampleRateTooLow { .. })));
    }

    #[test]
    fn round_trip_field() {
        let p = reference_sweep();
        let prog = synthesize_drive(&p, 1e9).unwrap();
        let rec = reconstruct_field(&prog).unwrap();
        for (s, b) in prog.samples.iter().zip(&rec) {
            let exact = field_at(&p, s.t).unwrap();
            let scale = exact.norm();
            for (x, y) in exact.to_array().into_iter().zip(b.to_array()) {
                assert!((x - y).abs() <= 1e-6 * scale, "t={} {x} {y}", s.t);
            }
        }
    }

    #[test]
    fn untwisted_drive_has_no_detuning() {
        let p = DriveParams::new(0.5e6, 1e14, 0.0, 0.2);
        let prog = synthesize_drive(&p, 1e9).unwrap();
        for b in reconstruct_field(&prog).unwrap() {
            assert!(b.bz.abs() <= 1.0);
        }
        let det = prog.constraint_report.iter().find(|c| c.name == "detuning").unwrap();
        assert!(det.pass);
        assert_eq!(det.observed_max, 0.0);
    }

    #[test]
    fn reconstruct_rejects_bad_programs() {
        let mut prog = synthesize_drive(&reference_sweep(), 1e9).unwrap();
        let single = PulseProgram { samples: prog.samples[..1].to_vec(), ..prog.clone() };
        assert!(matches!(reconstruct_field(&single), Err(TlzError::TooFewSamples { .. })));
        prog.samples.swap(3, 4);
        assert!(matches!(reconstruct_field(&prog), Err(TlzError::NonMonotoneTime { index: 4 })));
    }

    #[test]
    fn derivative_weights_match_textbook_stencils() {
        let w = derivative_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = derivative_weights(0.0, &[0.0, 1.0, 2.0]);
        for (a, b) in w.iter().zip([-1.5, 2.0, -0.5]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rabi_limited_duration_saturates_rabi_limit() {
        let p = DriveParams::new(0.5e6, 1e14, 0.2e-6, -0.3142);
        let t = sweep_duration(&p).unwrap();
        let prog = synthesize_drive(&p, 1e9).unwrap();
        assert_eq!(prog.duration, t);
        let rabi = &prog.constraint_report[0];
        assert_eq!(rabi.name, "rabi");
        assert!((rabi.observed_max / rabi.limit - 1.0).abs() <= 1e-3);
        assert!(prog.passes_constraints());
    }

    #[test]
    fn doubled_duration_violates_a_limit() {
        let p = DriveParams::new(0.5e6, 1e14, 0.2e-6, -0.3142);
        let t = sweep_duration(&p).unwrap();
        let prog = synthesize_drive(&p.with_duration(2.0 * t), 1e9).unwrap();
        assert!(!prog.passes_constraints());
    }

    #[test]
    fn prep_error_scales_polar_angles_only() {
        let prog = synthesize_drive(&reference_sweep(), 1e9).unwrap();
        assert_eq!(prep_rotation_error(&prog, 1.0), prog);
        let e = prep_rotation_error(&prog, 1.05);
        assert_eq!(e.prep.theta_i, 1.05 * prog.prep.theta_i);
        assert_eq!(e.prep.theta_f, 1.05 * prog.prep.theta_f);
        assert_eq!((e.prep.phi_i, e.prep.phi_f), (prog.prep.phi_i, prog.prep.phi_f));
        assert_eq!(e.samples, prog.samples);
        let half = PulseProgram {
            prep: PrepAngles { theta_i: PI / 2.0, ..prog.prep },
            ..prog.clone()
        };
        assert_eq!(prep_rotation_error(&half, 2.0).prep.theta_i, PI);
    }

    #[test]
    fn prep_angles_follow_endpoint_fields() {
        let p = reference_sweep();
        let prog = synthesize_drive(&p, 1e9).unwrap();
        let b0 = field_at(&p, 0.0).unwrap();
        assert_relative_eq!(prog.prep.theta_i.cos(), b0.bz / b0.norm(), max_relative = 1e-12);
        assert_relative_eq!(
            prog.prep.phi_i,
            wrap_angle(-(PI / 2.0 + (b0.by / b0.bx).atan())),
            max_relative = 1e-12
        );
        for a in [prog.prep.phi_i, prog.prep.phi_f] {
            assert!(a > -PI && a <= PI);
        }
    }

    #[test]
    fn waveform_export_formats() {
        let prog = synthesize_drive(&reference_sweep(), 2e8).unwrap();
        let polar = waveform_csv(&prog, WaveformColumns::Polar);
        let iq = waveform_csv(&prog, WaveformColumns::Iq);
        assert!(polar.starts_with("t_s,f_R_Hz,phi_rad,f_det_Hz\n"));
        assert!(iq.starts_with("t_s,I_Hz,Q_Hz,f_det_Hz\n"));
        assert_eq!(polar.lines().count(), prog.samples.len() + 1);
        let row: Vec<f64> = polar.lines().nth(5).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[0], prog.samples[4].t);
        assert_eq!(row[1], prog.samples[4].rabi);
        assert_eq!(row[2], prog.samples[4].phase);
        let row: Vec<f64> = iq.lines().nth(5).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_relative_eq!(row[1].hypot(row[2]), prog.samples[4].rabi, max_relative = 1e-14);
    }
}
