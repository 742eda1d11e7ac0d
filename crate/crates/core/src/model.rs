//! Model parameters, the quadratic drive field and its instantaneous
//! eigensystem.
//!
//! Everything is stored in frequency units: gaps and fields in Hz, the slope
//! `nu` in Hz², the curvature `kappa` and all times in seconds. The spin
//! Hamiltonian is `2π b·S`, so the eigenvalues of `b·S` in Hz are `±|b|/2`.
//!
//! The sweep coordinate runs as `q = -F (t - T/2)` and the field is
//!
//! ```text
//! b(q) = (m, ν q, ½ κ ν² q²)
//! ```

use num_complex::Complex64 as C64;

use crate::error::{Result, TlzError};

/// Magnitude below which a gauge-fixing component is considered zero.
pub const GAUGE_EPS: f64 = 1e-12;

/// Hardware limits that bound the achievable sweep duration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardwareLimits {
    /// Maximum Rabi frequency, Hz.
    pub f_r_max: f64,
    /// Maximum detuning, Hz.
    pub f_det_max: f64,
    /// Longest allowed sweep, seconds.
    pub t_cap: f64,
}

impl Default for HardwareLimits {
    fn default() -> Self {
        HardwareLimits { f_r_max: 13.6e6, f_det_max: 50e6, t_cap: 10e-6 }
    }
}

/// One instance of the quadratic twisted Landau-Zener model.
///
/// `duration` is `None` when the sweep length should follow
/// [`sweep_duration`]; `Some(T)` pins it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveParams {
    /// Gap parameter `m`, Hz.
    pub m: f64,
    /// Energy-slope parameter `ν`, Hz².
    pub nu: f64,
    /// Geodesic curvature `κ∥`, seconds.
    pub kappa: f64,
    /// Dimensionless signed sweep speed `F`.
    pub speed: f64,
    /// Sweep duration `T`, seconds.
    pub duration: Option<f64>,
    pub limits: HardwareLimits,
}

impl DriveParams {
    /// Parameters with default hardware limits and an automatic duration.
    pub fn new(m: f64, nu: f64, kappa: f64, speed: f64) -> Self {
        DriveParams { m, nu, kappa, speed, duration: None, limits: HardwareLimits::default() }
    }

    pub fn with_speed(self, speed: f64) -> Self {
        DriveParams { speed, ..self }
    }

    pub fn with_kappa(self, kappa: f64) -> Self {
        DriveParams { kappa, ..self }
    }

    pub fn with_duration(self, duration: f64) -> Self {
        DriveParams { duration: Some(duration), ..self }
    }

    pub fn with_limits(self, limits: HardwareLimits) -> Self {
        DriveParams { limits, ..self }
    }

    /// Checks the static invariants. `F` is not required to be nonzero here.
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(TlzError::invalid(name, format!("must be finite, got {v}")))
            }
        };
        finite("m", self.m)?;
        finite("nu", self.nu)?;
        finite("kappa", self.kappa)?;
        finite("F", self.speed)?;
        if self.m < 0.0 {
            return Err(TlzError::invalid("m", format!("must be >= 0, got {}", self.m)));
        }
        if self.nu <= 0.0 {
            return Err(TlzError::invalid("nu", format!("must be > 0, got {}", self.nu)));
        }
        if let Some(t) = self.duration {
            if !(t > 0.0 && t.is_finite()) {
                return Err(TlzError::invalid("T", format!("must be positive, got {t}")));
            }
        }
        let l = &self.limits;
        for (name, v) in [("f_r_max", l.f_r_max), ("f_det_max", l.f_det_max), ("t_cap", l.t_cap)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TlzError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// The pinned duration, or [`sweep_duration`] when none is pinned.
    pub fn resolved_duration(&self) -> Result<f64> {
        match self.duration {
            Some(t) => {
                self.validate()?;
                Ok(t)
            }
            None => sweep_duration(self),
        }
    }

    /// Copy with the duration pinned to its resolved value.
    pub fn resolved(&self) -> Result<DriveParams> {
        Ok(self.with_duration(self.resolved_duration()?))
    }

    /// Sweep coordinate `q = -F (t - T/2)` for a given duration.
    pub fn coordinate(&self, t: f64, duration: f64) -> f64 {
        -self.speed * (t - 0.5 * duration)
    }

    /// Field at sweep coordinate `q` (no time window involved).
    pub fn field_at_coordinate(&self, q: f64) -> FieldVector {
        FieldVector {
            bx: self.m,
            by: self.nu * q,
            bz: 0.5 * self.kappa * self.nu * self.nu * q * q,
        }
    }
}

/// Drive field in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        FieldVector { bx, by, bz }
    }

    pub fn norm(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.bx, self.by, self.bz]
    }

    pub fn scale(self, s: f64) -> Self {
        FieldVector { bx: s * self.bx, by: s * self.by, bz: s * self.bz }
    }
}

/// Field at lab time `t ∈ [0, T]`.
pub fn field_at(params: &DriveParams, t: f64) -> Result<FieldVector> {
    let duration = params.resolved_duration()?;
    if !(0.0..=duration).contains(&t) {
        return Err(TlzError::OutsideWindow { t, duration });
    }
    Ok(params.field_at_coordinate(params.coordinate(t, duration)))
}

/// The three duration bounds compared by [`sweep_duration`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DurationBounds {
    /// Rabi-amplitude bound `2 f_R^max / (ν|F|)`.
    pub rabi: f64,
    /// Detuning bound `2 sqrt(2 f_det^max / |κ|) / (ν|F|)`; infinite for κ = 0.
    pub detuning: f64,
    pub cap: f64,
}

impl DurationBounds {
    pub fn min(&self) -> f64 {
        self.cap.min(self.rabi).min(self.detuning)
    }
}

pub fn duration_bounds(params: &DriveParams) -> Result<DurationBounds> {
    params.validate()?;
    if params.speed == 0.0 {
        return Err(TlzError::ZeroSpeed);
    }
    let rate = params.nu * params.speed.abs();
    let l = &params.limits;
    let detuning = if params.kappa == 0.0 {
        f64::INFINITY
    } else {
        2.0 * (2.0 * l.f_det_max / params.kappa.abs()).sqrt() / rate
    };
    Ok(DurationBounds { rabi: 2.0 * l.f_r_max / rate, detuning, cap: l.t_cap })
}

/// Longest sweep the hardware limits allow: `min(t_cap, T_R, T_det)`.
pub fn sweep_duration(params: &DriveParams) -> Result<f64> {
    Ok(duration_bounds(params)?.min())
}

/// Normalised two-component amplitude vector in the computational basis.
pub type Amplitudes = [C64; 2];

/// Instantaneous eigenstates of `b·S`, lower state first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenSystem {
    /// Lower energy, Hz.
    pub e1: f64,
    /// Upper energy, Hz.
    pub e2: f64,
    /// Lower state `|1⟩`, spin antiparallel to the field.
    pub v1: Amplitudes,
    /// Upper state `|2⟩`, spin parallel to the field.
    pub v2: Amplitudes,
}

/// Eigen-decomposition of `b·S` with the gauge fixed so that the first
/// component of each eigenvector is real and non-negative (the second one,
/// when the first vanishes).
pub fn instantaneous_eigensystem(b: &FieldVector) -> Result<EigenSystem> {
    let r = b.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(TlzError::DegenerateField);
    }
    let perp = b.bx.hypot(b.by);
    let phase = if perp > 0.0 { C64::new(b.bx / perp, b.by / perp) } else { C64::new(1.0, 0.0) };
    // cos and sin of half the polar angle, each from the well-conditioned branch
    let (c, s) = if b.bz >= 0.0 {
        let d = (2.0 * r * (r + b.bz)).sqrt();
        ((r + b.bz) / d, perp / d)
    } else {
        let d = (2.0 * r * (r - b.bz)).sqrt();
        (perp / d, (r - b.bz) / d)
    };
    let v2 = fix_gauge([C64::new(c, 0.0), phase * s]);
    let v1 = fix_gauge([C64::new(s, 0.0), -phase * c]);
    Ok(EigenSystem { e1: -0.5 * r, e2: 0.5 * r, v1, v2 })
}

pub(crate) fn fix_gauge(v: Amplitudes) -> Amplitudes {
    let lead = if v[0].norm() >= GAUGE_EPS { v[0] } else { v[1] };
    let n = lead.norm();
    if n == 0.0 {
        return v;
    }
    let rot = lead.conj() / n;
    [v[0] * rot, v[1] * rot]
}

/// The 2×2 matrix of `b·S` in Hz, row-major.
pub fn hamiltonian_matrix(b: &FieldVector) -> [[C64; 2]; 2] {
    [
        [C64::new(0.5 * b.bz, 0.0), C64::new(0.5 * b.bx, -0.5 * b.by)],
        [C64::new(0.5 * b.bx, 0.5 * b.by), C64::new(-0.5 * b.bz, 0.0)],
    ]
}
