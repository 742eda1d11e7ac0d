//! Closed-form LZ/TLZ probabilities, perfect-tunneling (PT) speeds and the
//! numerically evaluated geometric amplitude factor.
//!
//! In the frequency-unit convention the TLZ formula reads
//!
//! ```text
//! P = exp[ −π²/(ν|F|) · (m + F ν κ / 4π)² ]
//! ```
//!
//! so the effective gap `m + Fνκ/4π` closes at `F_PT = −4πm/(νκ)`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Result, TlzError};
use crate::model::{instantaneous_eigensystem, Amplitudes, DriveParams};
use crate::propagator::tunneling_probability;

/// A formula value, flagged when it is the `F → 0` limit rather than an
/// evaluation of the formula itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormulaProbability {
    pub value: f64,
    pub limit: bool,
}

fn check_slope(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(TlzError::invalid("nu", format!("must be > 0, got {nu}")))
    }
}

/// Landau-Zener probability `exp(−π²m²/(ν|F|))`.
pub fn lz_probability(m: f64, nu: f64, speed: f64) -> Result<FormulaProbability> {
    tlz_probability(m, nu, 0.0, speed)
}

/// Twisted Landau-Zener probability.
///
/// At `F = 0` the adiabatic limit is returned (0 for a nonzero gap, 1 for a
/// closed gap) with `limit` set.
pub fn tlz_probability(m: f64, nu: f64, kappa: f64, speed: f64) -> Result<FormulaProbability> {
    check_slope(nu)?;
    if speed == 0.0 {
        let value = if m == 0.0 { 1.0 } else { 0.0 };
        return Ok(FormulaProbability { value, limit: true });
    }
    let gap = effective_gap(m, nu, kappa, speed);
    let value = (-(PI * PI) / (nu * speed.abs()) * gap * gap).exp();
    Ok(FormulaProbability { value, limit: false })
}

/// `m + F ν κ / 4π`, Hz.
pub fn effective_gap(m: f64, nu: f64, kappa: f64, speed: f64) -> f64 {
    m + speed * nu * kappa / (4.0 * PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PtKind {
    Analytic,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PtCondition {
    pub f_pt: f64,
    pub kind: PtKind,
    pub p_at_pt: f64,
}

/// Speed at which the effective gap closes, `−4πm/(νκ)`.
pub fn pt_speed(m: f64, nu: f64, kappa: f64) -> Result<PtCondition> {
    check_slope(nu)?;
    if m == 0.0 {
        return Ok(PtCondition { f_pt: 0.0, kind: PtKind::Analytic, p_at_pt: 1.0 });
    }
    if kappa == 0.0 {
        return Err(TlzError::NoPtSpeed);
    }
    let f_pt = -4.0 * PI * m / (nu * kappa);
    // effective gap is exactly zero here; P = exp(-0) = 1
    Ok(PtCondition { f_pt, kind: PtKind::Analytic, p_at_pt: 1.0 })
}

/// Coarse grid size used by [`pt_speed_numeric`].
pub const PT_GRID_POINTS: usize = 41;
/// Width of the final golden-section interval.
pub const PT_SPEED_TOL: f64 = 1e-4;

/// Locates the speed maximising the simulated tunneling probability inside
/// `bracket`.
///
/// For `m > 0` only speeds with the sign of `−κ` are searched. The coarse
/// grid never contains `F = 0` exactly. A maximum on the (restricted)
/// bracket edge is reported as [`TlzError::BracketBoundary`].
pub fn pt_speed_numeric(params: &DriveParams, bracket: (f64, f64)) -> Result<PtCondition> {
    params.validate()?;
    if params.kappa == 0.0 {
        return Err(TlzError::invalid("kappa", "numeric PT search needs kappa != 0"));
    }
    let (mut lo, mut hi) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    if params.m > 0.0 {
        if params.kappa > 0.0 {
            hi = hi.min(0.0);
        } else {
            lo = lo.max(0.0);
        }
    }
    if !(hi > lo) {
        return Err(TlzError::invalid(
            "bracket",
            format!("[{}, {}] holds no speed of the PT sign", bracket.0, bracket.1),
        ));
    }
    let n = PT_GRID_POINTS;
    let step = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n)
        .map(|k| {
            let f = lo + step * k as f64;
            if f.abs() < 1e-12 * step { f + 0.5 * step } else { f }
        })
        .collect();
    let probe = |f: f64| tunneling_probability(&params.with_speed(nonzero(f, step)));
    let values = grid.par_iter().map(|&f| probe(f)).collect::<Result<Vec<f64>>>()?;
    let best = values
        .iter()
        .enumerate()
        .fold(0, |acc, (k, &p)| if p > values[acc] { k } else { acc });
    if best == 0 || best == n - 1 {
        return Err(TlzError::BracketBoundary { at: grid[best], lo, hi });
    }
    let (f_pt, p_at_pt) = golden_section_max(probe, grid[best - 1], grid[best + 1], PT_SPEED_TOL)?;
    let (f_pt, p_at_pt) = if values[best] > p_at_pt { (grid[best], values[best]) } else { (f_pt, p_at_pt) };
    Ok(PtCondition { f_pt, kind: PtKind::Numeric, p_at_pt })
}

/// Bracket-widening attempts made by [`locate_pt_speed`].
pub const PT_BRACKET_WIDENINGS: usize = 8;

/// Numeric PT speed with an automatic bracket.
///
/// Starts from the analytic `F_PT ± 50%` (or `[−0.02, 0.02]` for a closed gap)
/// and pushes the offending edge outwards by one bracket width whenever the
/// maximum lands on it.
pub fn locate_pt_speed(params: &DriveParams) -> Result<PtCondition> {
    let (mut lo, mut hi) = if params.m == 0.0 {
        (-0.02, 0.02)
    } else {
        let f = pt_speed(params.m, params.nu, params.kappa)?.f_pt;
        (f.min(0.0) * 1.5 + f.max(0.0) * 0.5, f.min(0.0) * 0.5 + f.max(0.0) * 1.5)
    };
    let mut last = None;
    for _ in 0..=PT_BRACKET_WIDENINGS {
        match pt_speed_numeric(params, (lo, hi)) {
            Err(TlzError::BracketBoundary { at, lo: l, hi: h }) => {
                let width = h - l;
                if at - l <= h - at {
                    lo = l - width;
                } else {
                    hi = h + width;
                }
                last = Some(TlzError::BracketBoundary { at, lo: l, hi: h });
            }
            other => return other,
        }
    }
    Err(last.unwrap_or(TlzError::NoPtSpeed))
}

fn nonzero(f: f64, scale: f64) -> f64 {
    if f == 0.0 {
        1e-9 * scale
    } else {
        f
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a maximum of `f` on `[a, b]`, stopping once the
/// interval is narrower than `tol`. Returns the best point evaluated.
pub(crate) fn golden_section_max<F>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// Berry connection `A_nl(q) = ⟨n(q)| i∂_q |l(q)⟩` of the gauge-fixed
/// instantaneous eigenstates. Units are 1/s (inverse sweep coordinate).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerryConnection {
    pub a11: f64,
    pub a22: f64,
    pub a12: C64,
}

fn inner(a: &Amplitudes, b: &Amplitudes) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

fn check_step(dq: f64) -> Result<()> {
    if dq > 0.0 && dq.is_finite() {
        Ok(())
    } else {
        Err(TlzError::invalid("dq", format!("must be positive, got {dq}")))
    }
}

/// Central-difference Berry connection on the stencil `q ± dq`.
///
/// Diagonal entries use the link phase `−arg⟨n(q−dq)|n(q+dq)⟩ / 2dq`, which is
/// real by construction and agrees with the plain central difference to
/// `O(dq²)`.
pub fn berry_connection(params: &DriveParams, q: f64, dq: f64) -> Result<BerryConnection> {
    check_step(dq)?;
    let eig = |x: f64| instantaneous_eigensystem(&params.field_at_coordinate(x));
    let (minus, centre, plus) = (eig(q - dq)?, eig(q)?, eig(q + dq)?);
    let link = |a: &Amplitudes, b: &Amplitudes| -inner(a, b).arg() / (2.0 * dq);
    let dv2 = [
        (plus.v2[0] - minus.v2[0]) / (2.0 * dq),
        (plus.v2[1] - minus.v2[1]) / (2.0 * dq),
    ];
    Ok(BerryConnection {
        a11: link(&minus.v1, &plus.v1),
        a22: link(&minus.v2, &plus.v2),
        a12: C64::i() * inner(&centre.v1, &dv2),
    })
}

/// Geometric amplitude factor `R₁₂(q) = −A₁₁ + A₂₂ + ∂_q arg A₁₂`, in the
/// same units as `νκ` (the closed form gives `R₁₂(0) = νκ`).
pub fn geometric_amplitude_factor(params: &DriveParams, q: f64, dq: f64) -> Result<f64> {
    check_step(dq)?;
    let centre = berry_connection(params, q, dq)?;
    let minus = berry_connection(params, q - dq, dq)?;
    let plus = berry_connection(params, q + dq, dq)?;
    for a in [&minus, &centre, &plus] {
        let magnitude = a.a12.norm();
        if magnitude < 1e-14 {
            return Err(TlzError::PhaseUndefined { magnitude });
        }
    }
    let p0 = centre.a12.arg();
    let unwrap = |p: f64| p0 + (p - p0 + PI).rem_euclid(2.0 * PI) - PI;
    let slope = (unwrap(plus.a12.arg()) - unwrap(minus.a12.arg())) / (2.0 * dq);
    Ok(-centre.a11 + centre.a22 + slope)
}

/// Richardson combination `(4 R(dq/2) − R(dq)) / 3`.
pub fn geometric_amplitude_factor_extrapolated(params: &DriveParams, q: f64, dq: f64) -> Result<f64> {
    let coarse = geometric_amplitude_factor(params, q, dq)?;
    let fine = geometric_amplitude_factor(params, q, 0.5 * dq)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Default finite-difference step: `10⁻⁴` of the swept coordinate range `T|F|`.
pub fn default_fd_step(params: &DriveParams) -> Result<f64> {
    let duration = params.resolved_duration()?;
    if params.speed == 0.0 {
        return Err(TlzError::ZeroSpeed);
    }
    Ok(1e-4 * duration * params.speed.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn lz_zero_gap_is_one() {
        for f in [-1.0, -0.01, 0.3, 5.0] {
            assert_eq!(lz_probability(0.0, 1e14, f).unwrap().value, 1.0);
        }
    }

    #[test]
    fn lz_reference_value() {
        // 40-digit evaluation of exp(-0.24674011002723397)
        let p = lz_probability(0.5e6, 1e14, 0.1).unwrap();
        assert_relative_eq!(p.value, 0.781_343_730_547_444_25, max_relative = 1e-14);
        assert_eq!(p, lz_probability(0.5e6, 1e14, -0.1).unwrap());
    }

    #[test]
    fn tlz_closes_gap_at_pt() {
        let f = pt_speed(0.5e6, 1e14, 1.4e-6).unwrap().f_pt;
        assert_eq!(tlz_probability(0.5e6, 1e14, 1.4e-6, f).unwrap().value, 1.0);
        assert_relative_eq!(f, -0.044_879_895_051_282_76, max_relative = 1e-14);
    }

    #[test]
    fn tlz_reference_value() {
        // 40-digit evaluation: gap 1000064.8311951351 Hz, P 0.73040269008431938
        let gap = effective_gap(0.5e6, 1e14, 0.2e-6, 0.3142);
        assert_relative_eq!(gap, 1_000_064.831_194_735_1, max_relative = 1e-14);
        let p = tlz_probability(0.5e6, 1e14, 0.2e-6, 0.3142).unwrap().value;
        assert_relative_eq!(p, 0.730_402_690_084_319_38, max_relative = 1e-13);
    }

    #[test]
    fn zero_speed_limits_are_flagged() {
        let closed = tlz_probability(0.0, 1e14, 1e-6, 0.0).unwrap();
        assert_eq!(closed, FormulaProbability { value: 1.0, limit: true });
        let open = lz_probability(0.5e6, 1e14, 0.0).unwrap();
        assert_eq!(open, FormulaProbability { value: 0.0, limit: true });
        assert!(tlz_probability(0.5e6, 0.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn pt_speed_examples() {
        assert_relative_eq!(pt_speed(0.5e6, 1e14, 1.4e-6).unwrap().f_pt, -0.0449, epsilon = 1e-4);
        assert_eq!(pt_speed(0.0, 1e14, 2.5e-6).unwrap().f_pt, 0.0);
        assert_relative_eq!(pt_speed(2.0e6, 1e14, 1.4e-6).unwrap().f_pt, -0.1795, epsilon = 1e-4);
        assert!(matches!(pt_speed(0.5e6, 1e14, 0.0), Err(TlzError::NoPtSpeed)));
    }

    #[test]
    fn strongly_twisted_optimum_needs_a_wider_bracket() {
        // mκ = 10: the simulated optimum sits well beyond 1.5 F_PT
        let p = DriveParams::new(0.5e6, 1e14, 2e-5, -0.01);
        let analytic = pt_speed(p.m, p.nu, p.kappa).unwrap().f_pt;
        assert!(matches!(
            pt_speed_numeric(&p, (1.5 * analytic, 0.5 * analytic)),
            Err(TlzError::BracketBoundary { .. })
        ));
        let pt = locate_pt_speed(&p).unwrap();
        assert_eq!(pt.kind, PtKind::Numeric);
        assert!((pt.f_pt + 0.0075).abs() < 5e-4, "{}", pt.f_pt);
        assert!((pt.p_at_pt - 0.786).abs() < 5e-3, "{}", pt.p_at_pt);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section_max(|x| Ok(1.0 - (x - 0.3).powi(2)), -1.0, 1.0, 1e-8).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn untwisted_field_has_no_geometric_factor() {
        // b stays in the x-y plane: the diagonal connections coincide
        // and R12 vanishes everywhere
        let p = DriveParams::new(0.5e6, 1e14, 0.0, -0.3);
        for q in [-3e-8, -1e-9, 0.0, 2e-9, 5e-8] {
            let a = berry_connection(&p, q, 1e-11).unwrap();
            assert!((a.a22 - a.a11).abs() <= 1e-6 * a.a12.norm());
            let r = geometric_amplitude_factor(&p, q, 1e-11).unwrap();
            assert!(r.abs() <= 1e-5 * a.a12.norm(), "{q} {r}");
        }
    }

    #[test]
    fn diagonal_link_matches_plain_difference() {
        let p = DriveParams::new(0.5e6, 1e14, 0.7e-6, -0.3);
        let dq = 2e-12;
        for q in [-4e-9, 0.0, 3e-9] {
            let a = berry_connection(&p, q, dq).unwrap();
            let e = |x: f64| instantaneous_eigensystem(&p.field_at_coordinate(x)).unwrap();
            let (m, c, pl) = (e(q - dq), e(q), e(q + dq));
            let d = [(pl.v1[0] - m.v1[0]) / (2.0 * dq), (pl.v1[1] - m.v1[1]) / (2.0 * dq)];
            let plain = C64::i() * inner(&c.v1, &d);
            assert!((plain.re - a.a11).abs() <= 1e-6 * a.a12.norm());
            assert!(plain.im.abs() <= 1e-4 * a.a12.norm());
        }
    }

    #[test]
    fn amplitude_factor_closed_form() {
        let p = DriveParams::new(0.5e6, 1e14, 0.2e-6, -0.3142);
        let dq = default_fd_step(&p).unwrap();
        let r = geometric_amplitude_factor(&p, 0.0, dq).unwrap();
        assert_relative_eq!(r, 2.0e7, max_relative = 1e-3);
        let r = geometric_amplitude_factor(&p.with_kappa(-0.2e-6), 0.0, dq).unwrap();
        assert_relative_eq!(r, -2.0e7, max_relative = 1e-3);
    }

    #[test]
    fn amplitude_factor_converges_quadratically() {
        let p = DriveParams::new(0.5e6, 1e14, 0.2e-6, -0.3142);
        let exact = 2.0e7;
        let dev = |dq: f64| (geometric_amplitude_factor(&p, 0.0, dq).unwrap() - exact).abs();
        let (d1, d2) = (dev(2e-10), dev(1e-10));
        let ratio = d1 / d2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        let ex = geometric_amplitude_factor_extrapolated(&p, 0.0, 2e-10).unwrap();
        assert!((ex - exact).abs() < d2);
    }

    #[test]
    fn degenerate_stencil_rejected() {
        let p = DriveParams::new(0.0, 1e14, 1e-6, -0.3);
        assert!(matches!(berry_connection(&p, 0.0, 1e-11), Err(TlzError::DegenerateField)));
        assert!(berry_connection(&p, 1e-9, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn pt_speed_gives_unit_probability(
            m in 1e3f64..1e7, nu in 1e12f64..1e16, kappa in prop_oneof![-1e-5f64..-1e-9, 1e-9f64..1e-5],
        ) {
            let pt = pt_speed(m, nu, kappa).unwrap();
            let p = tlz_probability(m, nu, kappa, pt.f_pt).unwrap().value;
            prop_assert!((p - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn negative_speeds_win_for_positive_twist(
            m in 1e4f64..5e6, kappa in 1e-8f64..3e-6, frac in 0.0f64..1.0,
        ) {
            let nu = 1e14;
            let f = frac * pt_speed(m, nu, kappa).unwrap().f_pt.abs();
            prop_assume!(f > 0.0);
            let neg = tlz_probability(m, nu, kappa, -f).unwrap().value;
            let pos = tlz_probability(m, nu, kappa, f).unwrap().value;
            prop_assert!(neg >= pos);
        }

        #[test]
        fn formula_scaling_invariance(s in 0.1f64..10.0, f in -1.0f64..1.0) {
            prop_assume!(f.abs() > 1e-3);
            let a = tlz_probability(0.5e6, 1e14, 0.4e-6, f).unwrap().value;
            let b = tlz_probability(s * 0.5e6, s * s * 1e14, 0.4e-6 / s, f).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn untwisted_reduces_to_lz(m in 0.0f64..5e6, f in -2.0f64..2.0) {
            prop_assume!(f != 0.0);
            prop_assert_eq!(tlz_probability(m, 1e14, 0.0, f).unwrap(), lz_probability(m, 1e14, f).unwrap());
        }
    }
}
