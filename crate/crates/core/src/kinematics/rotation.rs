//! Rotation encodings: axis-angle, 3x3 matrices and the continuous 6D form
//! (first two matrix columns), plus the yaw/rest factorization about +Z.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Rotation vector: direction is the axis, norm the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub const IDENTITY: AxisAngle = AxisAngle(Vec3::new(0.0, 0.0, 0.0));

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Same rotation with the angle folded into `[0, π]`.
    pub fn canonical(&self) -> AxisAngle {
        matrix_to_aa(&aa_to_matrix(self))
    }

    pub fn to_matrix(&self) -> RotMat {
        aa_to_matrix(self)
    }
}

/// A proper rotation matrix (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(Matrix3<f64>);

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    /// Validates orthonormality and orientation before wrapping.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("rotation matrix has non-finite entries".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        if ortho >= ORTHONORMAL_TOL {
            return Err(Error::Numeric(format!(
                "matrix is not orthonormal (|RᵀR - I|_F = {ortho:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() >= ORTHONORMAL_TOL {
            return Err(Error::Numeric(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(RotMat(m))
    }

    /// Wraps a matrix produced by an operation that preserves rotations.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMat(m)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Rotation about the world up axis (+Z).
    pub fn yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotMat {
        RotMat(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        matrix_to_aa(self).angle()
    }

    pub fn to_aa(&self) -> AxisAngle {
        matrix_to_aa(self)
    }

    pub fn to_rot6d(&self) -> Rot6D {
        let m = &self.0;
        Rot6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
    }

    /// Rows as plain arrays, row-major.
    pub fn to_array(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_array_unchecked(a: &[f64]) -> Self {
        RotMat(Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]))
    }
}

impl Mul for RotMat {
    type Output = RotMat;

    fn mul(self, rhs: RotMat) -> RotMat {
        RotMat(self.0 * rhs.0)
    }
}

impl Mul<&RotMat> for &RotMat {
    type Output = RotMat;

    fn mul(self, rhs: &RotMat) -> RotMat {
        RotMat(self.0 * rhs.0)
    }
}

/// First two columns of a rotation matrix: `[c0x, c0y, c0z, c1x, c1y, c1z]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

pub(crate) fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues coefficients `sin θ/θ` and `(1 - cos θ)/θ²`, Taylor-expanded
/// near zero.
pub(crate) fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

pub fn aa_to_matrix(r: &AxisAngle) -> RotMat {
    let theta = r.0.norm();
    let (a, b) = rodrigues_coeffs(theta);
    let k = hat(&r.0);
    RotMat(Matrix3::identity() + k * a + k * k * b)
}

pub fn matrix_to_aa(rot: &RotMat) -> AxisAngle {
    let m = rot.matrix();
    let w = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * w.norm();
    let theta = sin.atan2(cos);

    if theta < 1e-6 {
        // w = 2 sin θ · axis, and θ / sin θ ≈ 1 + θ²/6.
        return AxisAngle(w * 0.5 * (1.0 + theta * theta / 6.0));
    }
    if PI - theta > 1e-3 {
        return AxisAngle(w * (theta / (2.0 * sin)));
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part, (R + Rᵀ)/2 - cos θ·I = (1 - cos θ)·a·aᵀ.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let one_minus_cos = 1.0 - cos;
    let (mut col, mut best) = (0, sym[(0, 0)]);
    for i in 1..3 {
        if sym[(i, i)] > best {
            col = i;
            best = sym[(i, i)];
        }
    }
    let mut axis: Vec3 = sym.column(col).into_owned() / (best.max(0.0) * one_minus_cos).sqrt();
    axis /= axis.norm();
    if w.norm() > 1e-12 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    AxisAngle(axis * theta)
}

/// Gram-Schmidt construction from the two 3-subvectors.
pub fn rot6d_to_matrix(v: &Rot6D) -> Result<RotMat> {
    let a1 = Vec3::new(v.0[0], v.0[1], v.0[2]);
    let a2 = Vec3::new(v.0[3], v.0[4], v.0[5]);
    let (b1, b2, b3) = gram_schmidt(&a1, &a2)?;
    Ok(RotMat(Matrix3::from_columns(&[b1, b2, b3])))
}

pub(crate) fn gram_schmidt(a1: &Vec3, a2: &Vec3) -> Result<(Vec3, Vec3, Vec3)> {
    if !(a1.iter().chain(a2.iter()).all(|x| x.is_finite())) {
        return Err(Error::Numeric("6D rotation has non-finite entries".into()));
    }
    let n1 = a1.norm();
    if n1 < 1e-12 {
        return Err(Error::Numeric("6D rotation has a zero first column".into()));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(a2);
    let n2 = u.norm();
    if n2 <= 1e-10 * a2.norm() || n2 < 1e-300 {
        return Err(Error::Numeric(
            "6D rotation columns are parallel or the second is zero".into(),
        ));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok((b1, b2, b3))
}

/// Splits `R = yaw · rest` using the intrinsic Z-X-Y Euler factorization,
/// with the Z factor taken as yaw.
///
/// For `R = Rz(ψ)·Rx(φ)·Ry(θ)` the second column is
/// `(-sin ψ cos φ, cos ψ cos φ, sin φ)`, so `ψ = atan2(-R₀₁, R₁₁)`. When
/// `cos φ` vanishes the yaw is read from the first column's horizontal
/// projection instead (which sets the Y factor to zero).
pub fn yaw_decompose(rot: &RotMat) -> (RotMat, RotMat) {
    let psi = yaw_angle(rot);
    let yaw = RotMat::yaw(psi);
    let rest = RotMat(yaw.0.transpose() * rot.0);
    (yaw, rest)
}

pub fn yaw_angle(rot: &RotMat) -> f64 {
    let m = rot.matrix();
    let c = m[(0, 1)].hypot(m[(1, 1)]);
    let psi = if c > 1e-9 {
        (-m[(0, 1)]).atan2(m[(1, 1)])
    } else {
        m[(1, 0)].atan2(m[(0, 0)])
    };
    // Keep exact zeros positive so repeated decompositions are bit-stable.
    if psi == 0.0 {
        0.0
    } else {
        psi
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_aa(rng: &mut impl Rng) -> AxisAngle {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        AxisAngle(axis * rng.random_range(0.0..PI))
    }

    #[test]
    fn identity_and_quarter_turn() {
        assert_eq!(aa_to_matrix(&AxisAngle::IDENTITY), RotMat::identity());
        let r = aa_to_matrix(&AxisAngle::new(0.0, 0.0, FRAC_PI_2));
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expect).norm() < 1e-15);
    }

    #[test]
    fn trace_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let aa = random_aa(&mut rng);
            let r = aa_to_matrix(&aa);
            assert!((r.matrix().trace() - (1.0 + 2.0 * aa.angle().cos())).abs() < 1e-12);
            let q = UnitQuaternion::from_scaled_axis(aa.0);
            assert!((q.to_rotation_matrix().matrix() - r.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_identity_and_half_turn() {
        assert_eq!(matrix_to_aa(&RotMat::identity()).0, Vec3::zeros());
        let aa = matrix_to_aa(&RotMat::about_x(PI));
        assert!((aa.0 - Vec3::new(PI, 0.0, 0.0)).norm() < 1e-12, "{aa:?}");
        let aa = matrix_to_aa(&RotMat::about_y(PI));
        assert!((aa.0 - Vec3::new(0.0, PI, 0.0)).norm() < 1e-12, "{aa:?}");
    }

    #[test]
    fn near_half_turn_keeps_axis_sign() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        for delta in [1e-2, 1e-4, 1e-7, 1e-10] {
            let aa = AxisAngle(axis * (PI - delta));
            let back = matrix_to_aa(&aa_to_matrix(&aa));
            assert!((back.0 - aa.0).norm() < 1e-7, "delta={delta}: {back:?}");
        }
    }

    #[test]
    fn small_angles_are_accurate() {
        for theta in [0.0, 1e-12, 1e-8, 1e-6, 1e-4] {
            let aa = AxisAngle(Vec3::new(1.0, 2.0, -2.0).normalize() * theta);
            let back = matrix_to_aa(&aa_to_matrix(&aa));
            assert!((back.0 - aa.0).norm() <= 1e-15 + 1e-12 * theta, "{theta}");
        }
    }

    #[test]
    fn non_orthonormal_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(RotMat::new(m).is_err());
        assert!(RotMat::new(-Matrix3::identity()).is_err());
        assert!(RotMat::new(*RotMat::about_x(0.3).matrix()).is_ok());
    }

    #[test]
    fn rot6d_examples() {
        let r = rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r, RotMat::identity());
        let r = rot6d_to_matrix(&Rot6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_eq!(r, RotMat::identity());
        assert!(rot6d_to_matrix(&Rot6D([0.0; 6])).is_err());
        assert!(rot6d_to_matrix(&Rot6D([1.0, 2.0, 3.0, 2.0, 4.0, 6.0])).is_err());
        assert!(rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).is_err());
        assert!(rot6d_to_matrix(&Rot6D([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn yaw_decompose_examples() {
        let (y, r) = yaw_decompose(&RotMat::identity());
        assert_eq!((y, r), (RotMat::identity(), RotMat::identity()));

        let (y, r) = yaw_decompose(&RotMat::yaw(1.2));
        assert!((y.matrix() - RotMat::yaw(1.2).matrix()).norm() < 1e-14);
        assert!((r.matrix() - Matrix3::identity()).norm() < 1e-14);

        // yaw(α)·roll(β), roll about the forward (+Y) axis.
        let composed = RotMat::yaw(-2.0) * RotMat::about_y(0.4);
        let (y, r) = yaw_decompose(&composed);
        assert!((y.matrix() - RotMat::yaw(-2.0).matrix()).norm() < 1e-12);
        assert!((r.matrix() - RotMat::about_y(0.4).matrix()).norm() < 1e-12);
    }

    #[test]
    fn yaw_decompose_at_gimbal_lock() {
        // Pitch of +90° about X sends the second column onto +Z.
        let composed = RotMat::yaw(0.7) * RotMat::about_x(FRAC_PI_2);
        let (y, r) = yaw_decompose(&composed);
        assert!(((y * r).matrix() - composed.matrix()).norm() < 1e-12);
        assert!((yaw_angle(&y) - 0.7).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn aa_matrix_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                                angle in 0.0f64..PI) {
            let axis = Vec3::new(x, y, z);
            prop_assume!(axis.norm() > 1e-3);
            let aa = AxisAngle(axis.normalize() * angle);
            let r = aa_to_matrix(&aa);
            prop_assert!(RotMat::new(*r.matrix()).is_ok());
            let back = matrix_to_aa(&r);
            prop_assert!(back.angle() <= PI + 1e-12);
            prop_assert!((aa_to_matrix(&back).matrix() - r.matrix()).norm() < 1e-9);
        }

        #[test]
        fn rot6d_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                            angle in 0.0f64..PI, s1 in 0.1f64..5.0) {
            let axis = Vec3::new(x, y, z);
            prop_assume!(axis.norm() > 1e-3);
            let r = aa_to_matrix(&AxisAngle(axis.normalize() * angle));
            let back = rot6d_to_matrix(&r.to_rot6d()).unwrap();
            prop_assert!((back.matrix() - r.matrix()).norm() < 1e-9);
            let mut scaled = r.to_rot6d();
            scaled.0.iter_mut().take(3).for_each(|v| *v *= s1);
            let back = rot6d_to_matrix(&scaled).unwrap();
            prop_assert!((back.matrix() - r.matrix()).norm() < 1e-9);
        }

        #[test]
        fn yaw_decomposition_is_idempotent(x in -1.0f64..1.0, y in -1.0f64..1.0,
                                            z in -1.0f64..1.0, angle in 0.0f64..PI) {
            let axis = Vec3::new(x, y, z);
            prop_assume!(axis.norm() > 1e-3);
            let r = aa_to_matrix(&AxisAngle(axis.normalize() * angle));
            let (yaw, rest) = yaw_decompose(&r);
            prop_assert!(((yaw * rest).matrix() - r.matrix()).norm() < 1e-12);
            let yaw_col = yaw.matrix().column(2).into_owned();
            prop_assert!((yaw_col - Vec3::z()).norm() < 1e-15);
            let (yaw2, _) = yaw_decompose(&rest);
            prop_assert!((yaw2.matrix() - Matrix3::identity()).norm() < 1e-9);
        }
    }
}
