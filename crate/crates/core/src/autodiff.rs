//! Forward-mode differentiation with single-direction dual numbers.
//!
//! The geometric pipelines (extrinsics, projection, triangulation) are written
//! once, generic over [`Real`], and evaluated either on plain `f64` or on
//! [`Dual`] to obtain an exact directional derivative. A full Jacobian is
//! assembled by seeding one input direction at a time. Because the value part
//! of a `Dual` is computed with exactly the same floating-point operations as
//! the `f64` path, iterative algorithms follow an identical trace in both.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Scalar abstraction shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    /// A variable seeded with unit tangent.
    pub const fn var(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let re = self.re / o.re;
        Dual::new(re, (self.eps - re * o.eps) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (2.0 * s))
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.eps * self.re.sin())
    }
}

pub type V2<S> = [S; 2];
pub type V3<S> = [S; 3];
pub type V4<S> = [S; 4];
/// Row-major 3×3.
pub type M3<S> = [[S; 3]; 3];

pub fn lift3(v: &nalgebra::Vector3<f64>) -> V3<f64> {
    [v[0], v[1], v[2]]
}

pub fn cst3<S: Real>(v: &V3<f64>) -> V3<S> {
    [S::cst(v[0]), S::cst(v[1]), S::cst(v[2])]
}

pub fn cst_m3<S: Real>(m: &nalgebra::Matrix3<f64>) -> M3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, e) in row.iter_mut().enumerate() {
            *e = S::cst(m[(r, c)]);
        }
    }
    out
}

pub fn values3<S: Real>(v: &V3<S>) -> nalgebra::Vector3<f64> {
    nalgebra::Vector3::new(v[0].value(), v[1].value(), v[2].value())
}

#[inline]
pub fn add3<S: Real>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<S: Real>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<S: Real>(a: &V3<S>, k: S) -> V3<S> {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn dot3<S: Real>(a: &V3<S>, b: &V3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3<S: Real>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn matvec3<S: Real>(m: &M3<S>, v: &V3<S>) -> V3<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat_t_vec3<S: Real>(m: &M3<S>, v: &V3<S>) -> V3<S> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn matmul3<S: Real>(a: &M3<S>, b: &M3<S>) -> M3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn transpose3<S: Real>(a: &M3<S>) -> M3<S> {
    let mut out = *a;
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

/// Solves `A x = b` for a 3×3 system via the adjugate. Branch-free, so the
/// value trace does not depend on the scalar type.
pub fn solve3<S: Real>(a: &M3<S>, b: &V3<S>) -> V3<S> {
    let c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    let c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    let c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    let c10 = a[0][2] * a[2][1] - a[0][1] * a[2][2];
    let c11 = a[0][0] * a[2][2] - a[0][2] * a[2][0];
    let c12 = a[0][1] * a[2][0] - a[0][0] * a[2][1];
    let c20 = a[0][1] * a[1][2] - a[0][2] * a[1][1];
    let c21 = a[0][2] * a[1][0] - a[0][0] * a[1][2];
    let c22 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
    // inverse = adjugate / det, adjugate = cofactorᵀ
    [
        (c00 * b[0] + c10 * b[1] + c20 * b[2]) / det,
        (c01 * b[0] + c11 * b[1] + c21 * b[2]) / det,
        (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det,
    ]
}

/// Hamilton product, scalar-first.
#[inline]
pub fn quat_mul<S: Real>(a: &V4<S>, b: &V4<S>) -> V4<S> {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix of `q / |q|`; the input need not be unit norm.
pub fn rotation_of<S: Real>(q: &V4<S>) -> M3<S> {
    let [w, x, y, z] = *q;
    let n2 = w * w + x * x + y * y + z * z;
    let two = S::cst(2.0);
    let m = [
        [
            w * w + x * x - y * y - z * z,
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        ],
    ];
    let mut out = m;
    for row in out.iter_mut() {
        for e in row.iter_mut() {
            *e = *e / n2;
        }
    }
    out
}

/// Unit quaternion for the rotation vector `phi` (`exp(phi/2)`), smooth at 0.
pub fn quat_exp<S: Real>(phi: &V3<S>) -> V4<S> {
    let n2 = dot3(phi, phi);
    if n2.value() < 1e-8 {
        // cos(n/2) and sin(n/2)/n by Taylor series in n²
        let c = S::one() - n2.scale(1.0 / 8.0) + n2 * n2.scale(1.0 / 384.0);
        let s = S::cst(0.5) - n2.scale(1.0 / 48.0) + n2 * n2.scale(1.0 / 3840.0);
        [c, phi[0] * s, phi[1] * s, phi[2] * s]
    } else {
        let n = n2.sqrt();
        let half = n.scale(0.5);
        let s = half.sin() / n;
        [half.cos(), phi[0] * s, phi[1] * s, phi[2] * s]
    }
}
