//! Scalar-first quaternion algebra.
//!
//! Convention: `q = (w, x, y, z)` and `R(q)` rotates body-frame vectors into
//! the world frame. Incremental body-frame rotations compose on the right,
//! `q_k = q_{k-1} ⊗ exp(phi)`, which is exactly `Ω(phi)·q_{k-1}`.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Matrix4x3, Vector3, Vector4};

use crate::autodiff;
use crate::error::{Error, Result};

/// Tolerance on `|q|` accepted by [`quat_to_rotmat`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Below this rotation-increment norm the Taylor branch of `Ω` is used.
const OMEGA_TAYLOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    /// Unit-norm copy with `w ≥ 0`.
    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidInput(format!(
                "cannot normalize quaternion with norm {n}"
            )));
        }
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Self::from_vector(&(self.to_vector() * s)))
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// `exp(phi)` for a rotation vector (axis · angle, rad).
    pub fn from_rotation_vector(phi: &Vector3<f64>) -> Self {
        let q = autodiff::quat_exp(&autodiff::lift3(phi));
        Self::new(q[0], q[1], q[2], q[3])
    }

    /// Rotation vector of a unit quaternion, angle in `[0, π]`.
    pub fn to_rotation_vector(self) -> Vector3<f64> {
        let q = if self.w < 0.0 {
            Self::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        };
        let v = Vector3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation_vector(&(axis.normalize() * angle))
    }

    /// Z-Y-X (yaw, pitch, roll) Euler angles: `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let qz = Self::from_axis_angle(&Vector3::z(), yaw);
        let qy = Self::from_axis_angle(&Vector3::y(), pitch);
        let qx = Self::from_axis_angle(&Vector3::x(), roll);
        qz * qy * qx
    }

    /// Quaternion (w ≥ 0) of a proper rotation matrix.
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
        let uq = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let q = Self::new(uq.w, uq.i, uq.j, uq.k);
        q.normalized().unwrap_or(Self::IDENTITY)
    }

    /// `R(q)·v` via the normalized rotation matrix.
    pub fn rotate(self, v: &Vector3<f64>) -> Vector3<f64> {
        rotation_matrix(&self.to_vector()) * v
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// `W(phi) = [[0, -phiᵀ], [phi, -[phi]×]]`.
fn omega_generator(phi: &Vector3<f64>) -> Matrix4<f64> {
    let mut w = Matrix4::zeros();
    let sk = skew(phi);
    for i in 0..3 {
        w[(0, i + 1)] = -phi[i];
        w[(i + 1, 0)] = phi[i];
        for j in 0..3 {
            w[(i + 1, j + 1)] = -sk[(i, j)];
        }
    }
    w
}

/// `cos(|phi|/2)` and `sin(|phi|/2)/|phi|`.
fn half_angle_terms(phi: &Vector3<f64>) -> (f64, f64) {
    let n = phi.norm();
    if n < OMEGA_TAYLOR {
        let n2 = n * n;
        (1.0 - n2 / 8.0, 0.5 - n2 / 48.0)
    } else {
        ((0.5 * n).cos(), (0.5 * n).sin() / n)
    }
}

/// The quaternion update matrix `Ω(phi)`; orthogonal for every finite `phi`.
pub fn omega_matrix(phi: &Vector3<f64>) -> Result<Matrix4<f64>> {
    if !phi.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite rotation increment {phi:?}"
        )));
    }
    let (c, s) = half_angle_terms(phi);
    Ok(Matrix4::identity() * c + omega_generator(phi) * s)
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: &Quaternion) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "quaternion norm {n} is not unit"
        )));
    }
    Ok(rotation_matrix(&q.to_vector()))
}

/// Rotation matrix of `q/|q|` without a norm check.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let m = autodiff::rotation_of(&[q[0], q[1], q[2], q[3]]);
    Matrix3::from_fn(|r, c| m[r][c])
}

/// `∂(R(q/|q|)·a)/∂q`.
pub fn rotate_jacobian(q: &Vector4<f64>, a: &Vector3<f64>) -> Matrix3x4<f64> {
    let w = q[0];
    let u = Vector3::new(q[1], q[2], q[3]);
    let n2 = q.norm_squared();
    // Q(q)·a = (w² − u·u)a + 2(u·a)u + 2w(u×a), homogeneous quadratic in q
    let qa = a * (w * w - u.dot(&u)) + u * (2.0 * u.dot(a)) + u.cross(a) * (2.0 * w);
    let d_w = a * (2.0 * w) + u.cross(a) * 2.0;
    let d_u =
        -a * u.transpose() * 2.0 + u * a.transpose() * 2.0 + Matrix3::identity() * (2.0 * u.dot(a))
            - skew(a) * (2.0 * w);
    let mut dq = Matrix3x4::zeros();
    dq.set_column(0, &d_w);
    dq.fixed_view_mut::<3, 3>(0, 1).copy_from(&d_u);
    dq / n2 - qa * q.transpose() * (2.0 / (n2 * n2))
}

/// `∂(Ω(phi)·q)/∂phi`.
pub fn omega_jacobian(phi: &Vector3<f64>, q: &Vector4<f64>) -> Matrix4x3<f64> {
    let n = phi.norm();
    let (c, s) = half_angle_terms(phi);
    // ds/dphi = k·phi
    let k = if n < 1e-3 {
        let n2 = n * n;
        -1.0 / 24.0 + n2 / 960.0
    } else {
        (0.5 * c - s) / (n * n)
    };
    // M(q)·phi = q ⊗ (0, phi)
    let w = q[0];
    let u = Vector3::new(q[1], q[2], q[3]);
    let mut m = Matrix4x3::zeros();
    m.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-u.transpose()));
    m.fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&(Matrix3::identity() * w + skew(&u)));
    let m_phi = m * phi;
    q * (-0.5 * s * phi.transpose()) + m_phi * (k * phi.transpose()) + m * s
}

impl std::ops::Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, rhs: Quaternion) -> Quaternion {
        let p = autodiff::quat_mul(&self.to_array(), &rhs.to_array());
        Quaternion::new(p[0], p[1], p[2], p[3])
    }
}
