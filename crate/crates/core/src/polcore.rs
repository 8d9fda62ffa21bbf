//! Linear-polarization algebra: 3-component Stokes vectors, 3×3 Mueller
//! matrices, reference frames and polarizer-image conversions.
//!
//! Only linear polarization is tracked, so Stokes vectors carry `s0` (total
//! intensity), `s1` (0° vs 90°) and `s2` (45° vs 135°).
//!
//! A Stokes vector is only meaningful relative to a [`Frame`]: the propagation
//! direction `d` and a transverse x-axis. The y-axis is `d × x`, so a positive
//! rotation angle turns x towards y, i.e. counterclockwise when looking into
//! the beam (towards the source).

use std::ops::{Add, AddAssign, Mul};

use thiserror::Error;

use crate::math::Vec3;

/// `s0` below this is treated as black when computing DoLP.
pub const DOLP_EPSILON: f64 = 1e-12;

const FRAME_TOLERANCE: f64 = 1e-9;
const DIRECTION_MATCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frames propagate in different directions (angle {angle:.3e} rad)")]
    MismatchedDirections { angle: f64 },
    #[error("polarizer intensity must be non-negative, got {0}")]
    NegativeIntensity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

impl StokesVector {
    pub const ZERO: StokesVector = StokesVector::new(0.0, 0.0, 0.0);

    pub const fn new(s0: f64, s1: f64, s2: f64) -> Self {
        StokesVector { s0, s1, s2 }
    }

    /// Unpolarized light of the given intensity.
    pub const fn unpolarized(intensity: f64) -> Self {
        StokesVector::new(intensity, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s0, self.s1, self.s2]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        StokesVector::new(a[0], a[1], a[2])
    }

    /// Non-negative intensity and polarized part no larger than the total.
    pub fn is_physical(&self) -> bool {
        self.s0 >= 0.0 && self.s1.hypot(self.s2) <= self.s0 * (1.0 + 1e-9)
    }

    pub fn scale(self, k: f64) -> Self {
        StokesVector::new(self.s0 * k, self.s1 * k, self.s2 * k)
    }

    pub fn dolp(&self) -> f64 {
        dolp(*self)
    }
}

impl Add for StokesVector {
    type Output = StokesVector;
    fn add(self, o: StokesVector) -> StokesVector {
        StokesVector::new(self.s0 + o.s0, self.s1 + o.s1, self.s2 + o.s2)
    }
}

impl AddAssign for StokesVector {
    fn add_assign(&mut self, o: StokesVector) {
        self.s0 += o.s0;
        self.s1 += o.s1;
        self.s2 += o.s2;
    }
}

/// 3×3 Mueller matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MuellerMatrix {
    pub m: [[f64; 3]; 3],
}

impl MuellerMatrix {
    pub const ZERO: MuellerMatrix = MuellerMatrix { m: [[0.0; 3]; 3] };
    pub const IDENTITY: MuellerMatrix = MuellerMatrix {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub const fn new(m: [[f64; 3]; 3]) -> Self {
        MuellerMatrix { m }
    }

    pub fn scale(self, k: f64) -> Self {
        let mut out = self;
        for row in out.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        out
    }

    pub fn apply(&self, s: StokesVector) -> StokesVector {
        apply(self, s)
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, o: &MuellerMatrix) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(o.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for MuellerMatrix {
    type Output = MuellerMatrix;
    fn mul(self, o: MuellerMatrix) -> MuellerMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        MuellerMatrix { m: out }
    }
}

impl Mul<StokesVector> for MuellerMatrix {
    type Output = StokesVector;
    fn mul(self, s: StokesVector) -> StokesVector {
        apply(&self, s)
    }
}

/// Matrix–vector product.
#[inline]
pub fn apply(m: &MuellerMatrix, s: StokesVector) -> StokesVector {
    let m = &m.m;
    StokesVector::new(
        m[0][0] * s.s0 + m[0][1] * s.s1 + m[0][2] * s.s2,
        m[1][0] * s.s0 + m[1][1] * s.s1 + m[1][2] * s.s2,
        m[2][0] * s.s0 + m[2][1] * s.s1 + m[2][2] * s.s2,
    )
}

/// Re-expresses a Stokes vector in a frame whose x-axis is the old x-axis
/// rotated by `phi` about the propagation direction.
///
/// Period π in `phi`.
pub fn rotation_mueller(phi: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * phi).sin_cos();
    MuellerMatrix::new([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
}

/// Ideal depolarizer `diag(1, 0, 0)`.
pub fn depolarizer() -> MuellerMatrix {
    MuellerMatrix::new([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
}

/// Rotation applied in place given precomputed `cos 2φ`, `sin 2φ`.
#[inline]
pub(crate) fn rotate_stokes(s: StokesVector, cos2: f64, sin2: f64) -> StokesVector {
    StokesVector::new(s.s0, cos2 * s.s1 + sin2 * s.s2, -sin2 * s.s1 + cos2 * s.s2)
}

/// Degree of linear polarization, clamped to `[0, 1]`. Returns 0 for
/// `s0 <= 1e-12` so black pixels stay finite.
pub fn dolp(s: StokesVector) -> f64 {
    if s.s0 <= DOLP_EPSILON {
        return 0.0;
    }
    ((s.s1 * s.s1 + s.s2 * s.s2).sqrt() / s.s0).clamp(0.0, 1.0)
}

/// Stokes vector from four ideal linear-polarizer images at 0°, 45°, 90° and
/// 135°.
pub fn stokes_from_polarizer(
    i0: f64,
    i45: f64,
    i90: f64,
    i135: f64,
) -> Result<StokesVector, PolError> {
    for v in [i0, i45, i90, i135] {
        // NaN falls through; only definite negatives are rejected
        if v < 0.0 {
            return Err(PolError::NegativeIntensity(v));
        }
    }
    Ok(StokesVector::new(
        (i0 + i45 + i90 + i135) / 2.0,
        i0 - i90,
        i45 - i135,
    ))
}

/// Intensity behind an ideal linear polarizer at angle `alpha` (Malus' law).
pub fn polarizer_from_stokes(s: StokesVector, alpha: f64) -> f64 {
    let (sin2, cos2) = (2.0 * alpha).sin_cos();
    0.5 * (s.s0 + s.s1 * cos2 + s.s2 * sin2)
}

/// The four polarizer intensities in the order 0°, 45°, 90°, 135°.
///
/// Uses the exact trigonometric values at those angles so that the
/// conversion round-trips with [`stokes_from_polarizer`].
pub fn polarizer_quad(s: StokesVector) -> [f64; 4] {
    [
        0.5 * (s.s0 + s.s1),
        0.5 * (s.s0 + s.s2),
        0.5 * (s.s0 - s.s1),
        0.5 * (s.s0 - s.s2),
    ]
}

/// Reference frame of a Stokes vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    /// Unit propagation direction.
    pub d: Vec3,
    /// Unit transverse reference axis.
    pub x: Vec3,
}

impl Frame {
    /// Validated constructor; `d` and `x` must be unit and orthogonal to 1e-9.
    pub fn new(d: Vec3, x: Vec3) -> Result<Frame, PolError> {
        let frame = Frame { d, x };
        if (d.length() - 1.0).abs() > FRAME_TOLERANCE
            || (x.length() - 1.0).abs() > FRAME_TOLERANCE
            || d.dot(x).abs() > FRAME_TOLERANCE
        {
            return Err(PolError::InvalidFrame(format!("d={d:?} x={x:?}")));
        }
        Ok(frame)
    }

    /// Frame for direction `d` whose x-axis is `hint` projected orthogonal to
    /// `d`. Falls back to an arbitrary orthogonal axis when `hint` is parallel
    /// to `d`.
    pub fn from_hint(d: Vec3, hint: Vec3) -> Frame {
        let x = (hint - d * hint.dot(d))
            .try_normalize(1e-12)
            .unwrap_or_else(|| d.any_orthogonal());
        Frame { d, x }
    }

    pub fn y(&self) -> Vec3 {
        self.d.cross(self.x)
    }
}

/// Angle `φ ∈ (−π, π]` such that rotating `from.x` by `φ` about `d`
/// (right-handed) gives `to.x`.
pub fn frame_rotation_angle(from: &Frame, to: &Frame) -> Result<f64, PolError> {
    let cos_dd = from.d.dot(to.d).clamp(-1.0, 1.0);
    let angle = from.d.cross(to.d).length().atan2(cos_dd);
    if angle > DIRECTION_MATCH_TOLERANCE {
        return Err(PolError::MismatchedDirections { angle });
    }
    let sin_phi = from.x.cross(to.x).dot(from.d);
    let cos_phi = from.x.dot(to.x);
    let phi = sin_phi.atan2(cos_phi);
    // atan2 yields [−π, π]; fold −π onto π
    Ok(if phi <= -std::f64::consts::PI { std::f64::consts::PI } else { phi })
}

/// Mueller rotation taking Stokes vectors from `from` into `to`.
pub fn frame_rotation(from: &Frame, to: &Frame) -> Result<MuellerMatrix, PolError> {
    frame_rotation_angle(from, to).map(rotation_mueller)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: StokesVector, b: StokesVector, tol: f64) -> bool {
        (a.s0 - b.s0).abs() <= tol && (a.s1 - b.s1).abs() <= tol && (a.s2 - b.s2).abs() <= tol
    }

    #[test]
    fn rotation_identities() {
        assert!(rotation_mueller(0.0).max_abs_diff(&MuellerMatrix::IDENTITY) < 1e-15);
        assert!(rotation_mueller(PI).max_abs_diff(&MuellerMatrix::IDENTITY) < 1e-15);
        // s1' = cos(π/2)·1, s2' = −sin(π/2)·1
        let out = rotation_mueller(FRAC_PI_4) * StokesVector::new(1.0, 1.0, 0.0);
        assert!(close(out, StokesVector::new(1.0, 0.0, -1.0), 1e-15));
    }

    #[test]
    fn rotation_tracks_polarizer_angle() {
        // Light polarized at 30° in the old frame sits at 30° − φ in the new one.
        let psi: f64 = 30f64.to_radians();
        let phi: f64 = 10f64.to_radians();
        let s = StokesVector::new(1.0, (2.0 * psi).cos(), (2.0 * psi).sin());
        let out = rotation_mueller(phi) * s;
        let expected = StokesVector::new(1.0, (2.0 * (psi - phi)).cos(), (2.0 * (psi - phi)).sin());
        assert!(close(out, expected, 1e-15));
    }

    #[test]
    fn apply_and_depolarizer() {
        let s = StokesVector::new(1.0, 0.3, 0.2);
        assert_eq!(MuellerMatrix::IDENTITY * s, s);
        assert_eq!(depolarizer() * s, StokesVector::new(1.0, 0.0, 0.0));
        assert_eq!(depolarizer().m[0], [1.0, 0.0, 0.0]);
        assert_eq!(depolarizer() * StokesVector::new(1.0, 1.0, 0.0), StokesVector::new(1.0, 0.0, 0.0));
        assert_eq!(depolarizer() * depolarizer(), depolarizer());
    }

    #[test]
    fn dolp_values() {
        assert_eq!(dolp(StokesVector::new(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(dolp(StokesVector::new(1.0, 1.0, 0.0)), 1.0);
        assert_abs_diff_eq!(dolp(StokesVector::new(2.0, 1.0, 1.0)), 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_eq!(dolp(StokesVector::new(0.0, 0.0, 0.0)), 0.0);
        assert_eq!(dolp(StokesVector::new(1e-13, 1e-13, 0.0)), 0.0);
    }

    #[test]
    fn polarizer_conversions() {
        assert_eq!(stokes_from_polarizer(1.0, 1.0, 1.0, 1.0).unwrap(), StokesVector::new(2.0, 0.0, 0.0));
        assert_eq!(stokes_from_polarizer(1.0, 0.5, 0.0, 0.5).unwrap(), StokesVector::new(1.0, 1.0, 0.0));
        assert!(matches!(
            stokes_from_polarizer(1.0, -0.1, 0.0, 0.0),
            Err(PolError::NegativeIntensity(_))
        ));
        for a in [0.0, 0.3, 1.0, 2.5] {
            assert_abs_diff_eq!(polarizer_from_stokes(StokesVector::new(1.0, 0.0, 0.0), a), 0.5, epsilon = 1e-15);
        }
        let h = StokesVector::new(1.0, 1.0, 0.0);
        assert_abs_diff_eq!(polarizer_from_stokes(h, 0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(polarizer_from_stokes(h, FRAC_PI_2), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(polarizer_from_stokes(StokesVector::new(1.0, 0.0, 1.0), FRAC_PI_4), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_angles() {
        let a = Frame::new(Vec3::Z, Vec3::X).unwrap();
        assert_eq!(frame_rotation_angle(&a, &a).unwrap(), 0.0);
        let b = Frame::new(Vec3::Z, Vec3::Y).unwrap();
        assert_abs_diff_eq!(frame_rotation_angle(&a, &b).unwrap(), FRAC_PI_2, epsilon = 1e-15);
        let c = Frame::new(Vec3::Z, -Vec3::X).unwrap();
        assert_abs_diff_eq!(frame_rotation_angle(&a, &c).unwrap(), PI, epsilon = 1e-15);
        let other = Frame::new(Vec3::X, Vec3::Y).unwrap();
        assert!(matches!(
            frame_rotation_angle(&a, &other),
            Err(PolError::MismatchedDirections { .. })
        ));
        assert!(Frame::new(Vec3::Z, Vec3::new(1.0, 0.0, 0.1)).is_err());
    }

    fn physical_stokes() -> impl Strategy<Value = StokesVector> {
        (0.0f64..10.0, 0.0f64..=1.0, -PI..PI).prop_map(|(s0, p, psi)| {
            StokesVector::new(s0, s0 * p * (2.0 * psi).cos(), s0 * p * (2.0 * psi).sin())
        })
    }

    fn unit_vec() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -PI..PI).prop_map(|(z, phi)| {
            let r = (1.0 - z * z).sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotation_composes(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let ab = rotation_mueller(a) * rotation_mueller(b);
            prop_assert!(ab.max_abs_diff(&rotation_mueller(a + b)) < 1e-12);
        }

        #[test]
        fn rotation_preserves_dolp(s in physical_stokes(), phi in -10.0f64..10.0) {
            prop_assert!((dolp(rotation_mueller(phi) * s) - dolp(s)).abs() < 1e-12);
        }

        #[test]
        fn dolp_is_intensity_invariant(s in physical_stokes(), gamma in 1e-3f64..1e3) {
            prop_assume!(s.s0 > 1e-6);
            prop_assert!((dolp(s.scale(gamma)) - dolp(s)).abs() < 1e-12);
        }

        #[test]
        fn polarizer_round_trip(s in physical_stokes()) {
            let angles = [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4];
            let i = angles.map(|a| polarizer_from_stokes(s, a).max(0.0));
            let back = stokes_from_polarizer(i[0], i[1], i[2], i[3]).unwrap();
            prop_assert!(close(back, s, 1e-12 * (1.0 + s.s0)));
            let q = polarizer_quad(s);
            let exact = stokes_from_polarizer(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0), q[3].max(0.0)).unwrap();
            prop_assert!(close(exact, s, 1e-12 * (1.0 + s.s0)));
        }

        #[test]
        fn frame_angle_round_trip(d in unit_vec(), hint in unit_vec(), phi in -3.1f64..3.1) {
            let x = (hint - d * hint.dot(d)).try_normalize(1e-3);
            prop_assume!(x.is_some());
            let from = Frame::new(d, x.unwrap()).unwrap();
            let to = Frame::new(d, from.x.rotate_about(d, phi)).unwrap();
            let measured = frame_rotation_angle(&from, &to).unwrap();
            prop_assert!((measured - phi).abs() < 1e-9);
        }
    }
}
