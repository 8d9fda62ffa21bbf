//! Fresnel reflection and transmission for real (dielectric) and complex
//! (conductor) refractive indices.
//!
//! The refractive index is written `n = η − k·i` with `k ≥ 0`. Every
//! function takes a single complex scalar; RGB materials loop over channels.
//!
//! Amplitude coefficients follow
//!
//! ```text
//! r_s = (cos θi − n cos θt) / (cos θi + n cos θt)
//! r_p = (n cos θi − cos θt) / (n cos θi + cos θt)
//! ```
//!
//! so a dielectric below Brewster's angle has `r_s < 0 < r_p` and a phase
//! delay `Δ = arg r_p − arg r_s = −π`. The Mueller matrices use the s-axis
//! (normal to the plane of incidence) as the x-axis of both the incident and
//! the exitant frame.

use num_complex::Complex64;
use thiserror::Error;

use crate::polcore::MuellerMatrix;

/// Amplitudes below this make the phase delay undefined.
const PHASE_EPSILON: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FresnelError {
    #[error("transmission undefined for conductors (k = {0})")]
    ConductorTransmission(f64),
    #[error("invalid refractive index: {0}")]
    InvalidIor(String),
}

/// Per-channel complex refractive index `η − k·i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexIor {
    pub eta: [f64; 3],
    pub k: [f64; 3],
}

impl ComplexIor {
    pub fn new(eta: [f64; 3], k: [f64; 3]) -> Result<Self, FresnelError> {
        for c in 0..3 {
            if !(eta[c] > 0.0 && eta[c].is_finite()) {
                return Err(FresnelError::InvalidIor(format!("eta[{c}] = {} must be > 0", eta[c])));
            }
            if !(k[c] >= 0.0 && k[c].is_finite()) {
                return Err(FresnelError::InvalidIor(format!("k[{c}] = {} must be >= 0", k[c])));
            }
        }
        Ok(ComplexIor { eta, k })
    }

    pub fn dielectric(eta: f64) -> Self {
        ComplexIor { eta: [eta; 3], k: [0.0; 3] }
    }

    pub fn is_dielectric(&self) -> bool {
        self.k.iter().all(|&k| k == 0.0)
    }

    pub fn channel(&self, c: usize) -> Complex64 {
        Complex64::new(self.eta[c], -self.k[c])
    }
}

/// Principal square root (`Re ≥ 0`) in closed algebraic form.
///
/// For `η > 0, k ≥ 0` the principal root of `n² − sin²θ` is the decaying
/// transmitted wave regardless of the sign used for the imaginary part.
#[inline]
pub(crate) fn csqrt(z: Complex64) -> Complex64 {
    if z.im == 0.0 {
        return if z.re >= 0.0 {
            Complex64::new(z.re.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-z.re).sqrt())
        };
    }
    let r = (z.re * z.re + z.im * z.im).sqrt();
    let re = (0.5 * (r + z.re)).max(0.0).sqrt();
    let im = (0.5 * (r - z.re)).max(0.0).sqrt().copysign(z.im);
    Complex64::new(re, im)
}

/// `n · cos θt` for incidence from vacuum, on the decaying branch.
#[inline]
fn n_cos_theta_t(n2: Complex64, cos_i: f64) -> Complex64 {
    let sin2 = (1.0 - cos_i * cos_i).max(0.0);
    csqrt(n2 - sin2)
}

/// Complex cosine of the transmission angle.
pub fn complex_cos_theta_t(n: Complex64, theta_i: f64) -> Complex64 {
    n_cos_theta_t(n * n, theta_i.cos()) / n
}

#[inline]
fn amplitudes_cos(n2: Complex64, cos_i: f64) -> (Complex64, Complex64) {
    let q = n_cos_theta_t(n2, cos_i);
    let c = Complex64::new(cos_i, 0.0);
    // r_p multiplied through by n to avoid forming cos θt = q / n
    let n2c = n2 * cos_i;
    ((c - q) / (c + q), (n2c - q) / (n2c + q))
}

/// Amplitude reflection coefficients `(r_s, r_p)`.
pub fn amplitude_coeffs(n: Complex64, theta_i: f64) -> (Complex64, Complex64) {
    amplitudes_cos(n * n, theta_i.cos())
}

/// Intensity reflectances `(R_s, R_p)`.
pub fn reflectances(n: Complex64, theta_i: f64) -> (f64, f64) {
    let (rs, rp) = amplitude_coeffs(n, theta_i);
    (rs.norm_sqr(), rp.norm_sqr())
}

/// `cos Δ` with `Δ = arg r_p − arg r_s`.
///
/// Where either amplitude vanishes (a dielectric exactly at Brewster's
/// angle) the value below Brewster, `−1`, is returned.
pub fn phase_delay_cos(n: Complex64, theta_i: f64) -> f64 {
    let (rs, rp) = amplitude_coeffs(n, theta_i);
    let (ars, arp) = (rs.norm(), rp.norm());
    if ars < PHASE_EPSILON || arp < PHASE_EPSILON {
        return -1.0;
    }
    ((rp * rs.conj()).re / (ars * arp)).clamp(-1.0, 1.0)
}

/// Entries of the reflection Mueller matrix: `R⁺`, `R⁻` and `R^× cos Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionTerms {
    pub r_plus: f64,
    pub r_minus: f64,
    pub r_cross_cos: f64,
}

impl ReflectionTerms {
    /// Evaluates the terms at incidence cosine `cos_i`, given `n²`.
    #[inline]
    pub fn from_cos(n2: Complex64, cos_i: f64) -> Self {
        let (rs, rp) = amplitudes_cos(n2, cos_i);
        let (big_rs, big_rp) = (rs.norm_sqr(), rp.norm_sqr());
        ReflectionTerms {
            r_plus: 0.5 * (big_rs + big_rp),
            r_minus: 0.5 * (big_rs - big_rp),
            // |r_s||r_p| cos Δ, with no division by vanishing amplitudes
            r_cross_cos: (rp * rs.conj()).re,
        }
    }

    pub fn mueller(&self) -> MuellerMatrix {
        MuellerMatrix::new([
            [self.r_plus, self.r_minus, 0.0],
            [self.r_minus, self.r_plus, 0.0],
            [0.0, 0.0, self.r_cross_cos],
        ])
    }
}

/// Fresnel reflection Mueller matrix `[[R⁺,R⁻,0],[R⁻,R⁺,0],[0,0,R^× cos Δ]]`.
pub fn fresnel_reflection_mueller(n: Complex64, theta_i: f64) -> MuellerMatrix {
    ReflectionTerms::from_cos(n * n, theta_i.cos()).mueller()
}

/// Entries of the transmission Mueller matrix: `T⁺`, `T⁻`, `T^×`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionTerms {
    pub t_plus: f64,
    pub t_minus: f64,
    pub t_cross: f64,
}

impl TransmissionTerms {
    /// Terms for a real index `n` at incidence cosine `cos_i`.
    #[inline]
    pub fn from_cos(n: f64, cos_i: f64) -> Self {
        let (rs, rp) = amplitudes_cos(Complex64::new(n * n, 0.0), cos_i);
        let ts = 1.0 - rs.norm_sqr();
        let tp = 1.0 - rp.norm_sqr();
        TransmissionTerms {
            t_plus: 0.5 * (ts + tp),
            t_minus: 0.5 * (ts - tp),
            t_cross: (ts * tp).max(0.0).sqrt(),
        }
    }

    pub fn mueller(&self) -> MuellerMatrix {
        MuellerMatrix::new([
            [self.t_plus, self.t_minus, 0.0],
            [self.t_minus, self.t_plus, 0.0],
            [0.0, 0.0, self.t_cross],
        ])
    }
}

/// Fresnel transmission Mueller matrix built from `T = 1 − R` per
/// polarization component. Only defined for real indices.
pub fn fresnel_transmission_mueller(n: Complex64, theta: f64) -> Result<MuellerMatrix, FresnelError> {
    if n.im != 0.0 {
        return Err(FresnelError::ConductorTransmission(-n.im));
    }
    Ok(TransmissionTerms::from_cos(n.re, theta.cos()).mueller())
}

pub fn brewster_angle(n: f64) -> f64 {
    n.atan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    const GOLDISH: Complex64 = Complex64::new(0.2, -3.4);

    fn real(n: f64) -> Complex64 {
        Complex64::new(n, 0.0)
    }

    /// Textbook real-valued Fresnel via Snell's law.
    fn real_oracle(n: f64, theta: f64) -> (f64, f64) {
        let ci = theta.cos();
        let st = theta.sin() / n;
        let ct = (1.0 - st * st).sqrt();
        let rs = (ci - n * ct) / (ci + n * ct);
        let rp = (n * ci - ct) / (n * ci + ct);
        (rs * rs, rp * rp)
    }

    #[test]
    fn cos_theta_t_values() {
        assert_eq!(complex_cos_theta_t(real(1.5), 0.0), Complex64::new(1.0, 0.0));
        let c = complex_cos_theta_t(real(1.5), FRAC_PI_4);
        assert_abs_diff_eq!(c.re, (1.0f64 - 0.5 / 2.25).sqrt(), epsilon = 1e-15);
        assert_eq!(c.im, 0.0);
        // independent evaluation: polar-form sqrt of 1 − (sin θ / n)², decaying branch
        let c = complex_cos_theta_t(GOLDISH, FRAC_PI_3);
        assert_abs_diff_eq!(c.re, 1.0316117355248795, epsilon = 1e-13);
        assert_abs_diff_eq!(c.im, -0.0036739896088349836, epsilon = 1e-13);
        let s = FRAC_PI_3.sin() / GOLDISH;
        let mut oracle = (Complex64::new(1.0, 0.0) - s * s).sqrt();
        if (GOLDISH * oracle).re < 0.0 {
            oracle = -oracle;
        }
        assert!((c - oracle).norm() < 1e-13);
    }

    #[test]
    fn amplitude_values() {
        let (rs, rp) = amplitude_coeffs(real(1.5), 0.0);
        assert_abs_diff_eq!(rs.re, -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(rp.re, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(rs.norm_sqr(), 0.04, epsilon = 1e-15);
        let (_, rp) = amplitude_coeffs(real(1.5), brewster_angle(1.5));
        assert!(rp.norm() < 1e-12);
        let (rs, rp) = amplitude_coeffs(GOLDISH, 0.0);
        let expected = (GOLDISH - 1.0).norm_sqr() / (GOLDISH + 1.0).norm_sqr();
        assert_abs_diff_eq!(rs.norm_sqr(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(rp.norm_sqr(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, 12.2 / 13.0, epsilon = 1e-15);
    }

    #[test]
    fn reflectance_values() {
        let (s, p) = reflectances(real(1.5), 0.0);
        assert_abs_diff_eq!(s, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.04, epsilon = 1e-15);
        let (s, p) = reflectances(real(1.5), FRAC_PI_2 - 1e-7);
        assert!(s > 0.999 && p > 0.999);
        let (s, p) = reflectances(GOLDISH, FRAC_PI_3);
        assert_abs_diff_eq!(s, 0.969687823289365, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.8953806900657011, epsilon = 1e-12);
        for i in 0..=800 {
            let (s, p) = reflectances(GOLDISH, (i as f64 * 0.1).to_radians());
            assert!(s > 0.8 && p > 0.8);
        }
    }

    #[test]
    fn phase_delay_values() {
        assert_eq!(phase_delay_cos(real(1.5), 30f64.to_radians()), -1.0);
        assert_eq!(phase_delay_cos(real(1.5), 70f64.to_radians()), 1.0);
        assert_eq!(phase_delay_cos(real(1.5), brewster_angle(1.5)), -1.0);
        assert_abs_diff_eq!(phase_delay_cos(GOLDISH, FRAC_PI_3), -0.6922278250094084, epsilon = 1e-12);
        let mut prev = phase_delay_cos(GOLDISH, 0.0);
        for i in 1..=890 {
            let cd = phase_delay_cos(GOLDISH, (i as f64 * 0.1).to_radians());
            assert!(cd >= prev - 1e-15, "cos delta not monotone at {}", i as f64 * 0.1);
            assert!((cd - prev).abs() < 0.2);
            prev = cd;
        }
    }

    #[test]
    fn reflection_mueller_values() {
        let m = fresnel_reflection_mueller(real(1.5), 0.0);
        assert_abs_diff_eq!(m.m[0][0], 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(m.m[0][1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.m[2][2], -0.04, epsilon = 1e-15);
        let m = fresnel_reflection_mueller(real(1.5), brewster_angle(1.5));
        assert_abs_diff_eq!(m.m[0][0], m.m[0][1], epsilon = 1e-15);
        assert_abs_diff_eq!(m.m[2][2], 0.0, epsilon = 1e-15);
        for theta in [0.1, 0.5, 0.9, 1.3] {
            for n in [real(1.5), GOLDISH] {
                let m = fresnel_reflection_mueller(n, theta);
                let out = m * crate::polcore::StokesVector::unpolarized(1.0);
                assert_abs_diff_eq!(out.dolp(), m.m[0][1].abs() / m.m[0][0], epsilon = 1e-14);
                // R^× cos Δ agrees with the explicit product
                let (s, p) = reflectances(n, theta);
                assert_abs_diff_eq!(m.m[2][2], (s * p).sqrt() * phase_delay_cos(n, theta), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn transmission_values() {
        let m = fresnel_transmission_mueller(real(1.5), 0.0).unwrap();
        assert_abs_diff_eq!(m.m[0][0], 0.96, epsilon = 1e-15);
        assert_abs_diff_eq!(m.m[0][1], 0.0, epsilon = 1e-15);
        let tb = brewster_angle(1.5);
        let m = fresnel_transmission_mueller(real(1.5), tb).unwrap();
        let (rs, _) = reflectances(real(1.5), tb);
        let (ts, tp) = (m.m[0][0] + m.m[0][1], m.m[0][0] - m.m[0][1]);
        assert_abs_diff_eq!(tp, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ts, 1.0 - rs, epsilon = 1e-15);
        assert!(matches!(
            fresnel_transmission_mueller(GOLDISH, 0.3),
            Err(FresnelError::ConductorTransmission(_))
        ));
    }

    #[test]
    fn brewster_values() {
        assert_abs_diff_eq!(brewster_angle(1.5), 0.982793723247329, epsilon = 1e-15);
        assert_abs_diff_eq!(brewster_angle(1.0), FRAC_PI_4, epsilon = 1e-15);
        for n in [1.3, 1.5, 2.4] {
            let (_, p) = reflectances(real(n), brewster_angle(n));
            assert!(p < 1e-12);
        }
    }

    #[test]
    fn dielectric_limit_matches_real_formulas() {
        for n in [1.3, 1.5, 2.4] {
            for i in 0..900 {
                let theta = (i as f64 * 0.1).to_radians();
                let (s, p) = reflectances(real(n), theta);
                let (os, op) = real_oracle(n, theta);
                assert!((s - os).abs() < 1e-12 && (p - op).abs() < 1e-12);
                let m = fresnel_transmission_mueller(real(n), theta).unwrap();
                assert!((m.m[0][0] + m.m[0][1] + s - 1.0).abs() < 1e-12);
                assert!((m.m[0][0] - m.m[0][1] + p - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dielectric_phase_steps_at_brewster() {
        for n in [1.3, 1.5, 2.4] {
            let tb = brewster_angle(n).to_degrees();
            for i in 0..900 {
                let deg = i as f64 * 0.1;
                let cd = phase_delay_cos(real(n), deg.to_radians());
                let expected = if deg < tb { -1.0 } else { 1.0 };
                assert!((cd - expected).abs() < 1e-9, "n={n} θ={deg} cosΔ={cd}");
            }
        }
    }

    #[test]
    fn reflection_preserves_physicality() {
        use crate::polcore::StokesVector;
        for i in 0..90 {
            let theta = (i as f64).to_radians();
            for n in [real(1.5), GOLDISH, Complex64::new(1.37, -1.77)] {
                let m = fresnel_reflection_mueller(n, theta);
                for psi in [0.0, 0.4, 1.1, 2.0] {
                    let s = StokesVector::new(1.0, (2.0f64 * psi).cos(), (2.0f64 * psi).sin());
                    let out = m * s;
                    assert!(out.s0 >= 0.0);
                    assert!(out.s1.hypot(out.s2) <= out.s0 * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn ior_validation() {
        assert!(ComplexIor::new([1.5; 3], [0.0; 3]).unwrap().is_dielectric());
        assert!(!ComplexIor::new([0.2; 3], [3.4; 3]).unwrap().is_dielectric());
        assert!(ComplexIor::new([0.0, 1.0, 1.0], [0.0; 3]).is_err());
        assert!(ComplexIor::new([1.0; 3], [-1.0, 0.0, 0.0]).is_err());
        assert_eq!(ComplexIor::new([0.2; 3], [3.4; 3]).unwrap().channel(1), GOLDISH);
    }

    #[test]
    fn csqrt_matches_polar_form() {
        for z in [
            Complex64::new(2.0, 1.0),
            Complex64::new(-2.0, 1.0),
            Complex64::new(-2.0, -1.0),
            Complex64::new(-0.04, -1.36),
            Complex64::new(-3.0, 0.0),
        ] {
            let a = csqrt(z);
            let b = z.sqrt();
            assert!((a - b).norm() < 1e-14, "{z}");
            assert!(a.re >= 0.0);
        }
    }
}
