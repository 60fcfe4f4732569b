//! Pinhole camera with Brown–Conrady distortion and the body-to-camera
//! extrinsic offsets.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self as ad, Real, M3, V2, V3, V4};
use crate::error::{Error, Result};
use crate::quaternion::{self, Quaternion};

/// Points closer than this along the optical axis count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

const UNDISTORT_MAX_ITER: usize = 20;
const UNDISTORT_TOL: f64 = 1e-12;
const UNDISTORT_RESIDUAL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
    /// Body→camera rotation: `x_cam = R(q_ic)·x_body`.
    pub q_ic: Quaternion,
    /// Camera center in the body frame (m).
    pub p_ic: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    /// Distortion-free camera with identity extrinsics.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            q_ic: Quaternion::IDENTITY,
            p_ic: Vector3::zeros(),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ];
        if vals.iter().any(|v| !v.is_finite()) || self.p_ic.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "camera parameters must be finite".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "focal lengths and image size must be positive".into(),
            ));
        }
        quaternion::quat_to_rotmat(&self.q_ic)?;
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
            .iter()
            .any(|v| *v != 0.0)
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u.is_finite()
            && v.is_finite()
            && u >= 0.0
            && v >= 0.0
            && u < self.width as f64
            && v < self.height as f64
    }

    /// Applies the lens distortion to normalized coordinates.
    pub fn distort(&self, xn: &Vector2<f64>) -> Vector2<f64> {
        let d = distort_generic(self, &[xn.x, xn.y]);
        Vector2::new(d[0], d[1])
    }

    /// `∂distort/∂(x, y)`.
    pub fn distort_jacobian(&self, xn: &Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (xn.x, xn.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let dradial_dr2 = self.k1 + r2 * (2.0 * self.k2 + 3.0 * r2 * self.k3);
        let (p1, p2) = (self.p1, self.p2);
        Matrix2::new(
            radial + 2.0 * x * x * dradial_dr2 + 2.0 * p1 * y + 6.0 * p2 * x,
            2.0 * x * y * dradial_dr2 + 2.0 * p1 * x + 2.0 * p2 * y,
            2.0 * x * y * dradial_dr2 + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + 2.0 * y * y * dradial_dr2 + 6.0 * p1 * y + 2.0 * p2 * x,
        )
    }

    /// Pixel of a camera-frame point.
    pub fn project(&self, pt_cam: &Vector3<f64>) -> Result<Vector2<f64>> {
        if pt_cam.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: pt_cam.z });
        }
        let px = project_generic(self, &ad::lift3(pt_cam));
        Ok(Vector2::new(px[0], px[1]))
    }

    /// `∂project/∂pt_cam`.
    pub fn project_jacobian(&self, pt_cam: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
        let z = pt_cam.z;
        if z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: z });
        }
        let xn = Vector2::new(pt_cam.x / z, pt_cam.y / z);
        let dn = Matrix2x3::new(1.0 / z, 0.0, -xn.x / z, 0.0, 1.0 / z, -xn.y / z);
        let f = Matrix2::new(self.fx, 0.0, 0.0, self.fy);
        Ok(f * self.distort_jacobian(&xn) * dn)
    }

    /// Normalized image coordinates of a raw pixel, by Newton iteration on the
    /// distortion map.
    pub fn undistort(&self, u: f64, v: f64) -> Result<Vector2<f64>> {
        self.undistort_with(u, v, UNDISTORT_MAX_ITER)
    }

    fn undistort_with(&self, u: f64, v: f64, max_iter: usize) -> Result<Vector2<f64>> {
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite pixel ({u}, {v})")));
        }
        let target = Vector2::new((u - self.cx) / self.fx, (v - self.cy) / self.fy);
        if !self.has_distortion() {
            return Ok(target);
        }
        let mut x = target;
        for _ in 0..max_iter {
            let r = self.distort(&x) - target;
            let step = self
                .distort_jacobian(&x)
                .lu()
                .solve(&r)
                .ok_or(Error::DistortionInversion { u, v })?;
            x -= step;
            if !x.iter().all(|c| c.is_finite()) {
                return Err(Error::DistortionInversion { u, v });
            }
            if step.norm() < UNDISTORT_TOL {
                break;
            }
        }
        if (self.distort(&x) - target).norm() > UNDISTORT_RESIDUAL {
            return Err(Error::DistortionInversion { u, v });
        }
        Ok(x)
    }

    /// World→camera rotation and camera center of a body pose `(p, q)`.
    pub fn extrinsics(
        &self,
        p: &Vector3<f64>,
        q: &Vector4<f64>,
    ) -> (nalgebra::Matrix3<f64>, Vector3<f64>) {
        let (r, c) = extrinsics_generic(self, &ad::lift3(p), &[q[0], q[1], q[2], q[3]]);
        (
            nalgebra::Matrix3::from_fn(|i, j| r[i][j]),
            Vector3::new(c[0], c[1], c[2]),
        )
    }

    /// Camera-frame coordinates of world point `pw` seen from body pose `(p, q)`.
    pub fn world_to_camera(
        &self,
        p: &Vector3<f64>,
        q: &Vector4<f64>,
        pw: &Vector3<f64>,
    ) -> Vector3<f64> {
        let (r, c) = self.extrinsics(p, q);
        r * (pw - c)
    }
}

/// Brown–Conrady distortion of normalized coordinates.
pub fn distort_generic<S: Real>(cam: &CameraModel, xn: &V2<S>) -> V2<S> {
    let [x, y] = *xn;
    let r2 = x * x + y * y;
    let radial = S::one() + r2 * (S::cst(cam.k1) + r2 * (S::cst(cam.k2) + r2.scale(cam.k3)));
    let xy = x * y;
    let two = 2.0;
    [
        x * radial + xy.scale(two * cam.p1) + (r2 + (x * x).scale(two)).scale(cam.p2),
        y * radial + (r2 + (y * y).scale(two)).scale(cam.p1) + xy.scale(two * cam.p2),
    ]
}

/// Perspective projection with distortion; no depth check.
pub fn project_generic<S: Real>(cam: &CameraModel, pt: &V3<S>) -> V2<S> {
    let xn = [pt[0] / pt[2], pt[1] / pt[2]];
    let d = distort_generic(cam, &xn);
    [
        d[0].scale(cam.fx) + S::cst(cam.cx),
        d[1].scale(cam.fy) + S::cst(cam.cy),
    ]
}

/// `(R_c, c)` with `R_c = R(q_ic)·R(q)ᵀ` (world→camera) and
/// `c = p + R(q)·p_ic` (camera center, world).
pub fn extrinsics_generic<S: Real>(cam: &CameraModel, p: &V3<S>, q: &V4<S>) -> (M3<S>, V3<S>) {
    let r_body = ad::rotation_of(q);
    let r_ic = ad::cst_m3::<S>(&quaternion::rotation_matrix(&cam.q_ic.to_vector()));
    let r_c = ad::matmul3(&r_ic, &ad::transpose3(&r_body));
    let center = ad::add3(p, &ad::matvec3(&r_body, &ad::cst3(&ad::lift3(&cam.p_ic))));
    (r_c, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use rand::{Rng, SeedableRng};

    fn distorted() -> CameraModel {
        CameraModel {
            k1: -0.3,
            k2: 0.08,
            k3: -0.01,
            p1: 1e-3,
            p2: -5e-4,
            ..CameraModel::pinhole(420.0, 420.0, 240.0, 320.0, 480, 640)
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = CameraModel::pinhole(400.0, 400.0, 320.0, 240.0, 640, 480);
        assert_eq!(
            cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap(),
            Vector2::new(320.0, 240.0)
        );
    }

    #[test]
    fn pinhole_formula() {
        let cam = CameraModel::pinhole(400.0, 400.0, 320.0, 240.0, 640, 480);
        let px = cam.project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px.x, 520.0);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let cam = distorted();
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
        assert!(matches!(
            cam.project_jacobian(&Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn strong_radial_roundtrip() {
        let cam = CameraModel {
            k1: -0.3,
            ..CameraModel::pinhole(420.0, 420.0, 240.0, 320.0, 480, 640)
        };
        let pt = Vector3::new(0.3, -0.4, 1.0);
        let px = cam.project(&pt).unwrap();
        let xn = cam.undistort(px.x, px.y).unwrap();
        assert!((xn - Vector2::new(0.3, -0.4)).norm() < 1e-9);
    }

    #[test]
    fn undistort_roundtrip_over_image() {
        let cam = distorted();
        // grid over the central 90% of the image
        for i in 0..=30 {
            for j in 0..=30 {
                let u = 24.0 + 432.0 * i as f64 / 30.0;
                let v = 32.0 + 576.0 * j as f64 / 30.0;
                let xn = cam.undistort(u, v).unwrap();
                let back = cam.distort(&xn);
                let px = Vector2::new(back.x * cam.fx + cam.cx, back.y * cam.fy + cam.cy);
                assert!((px - Vector2::new(u, v)).norm() < 1e-9, "({u}, {v})");
            }
        }
    }

    #[test]
    fn undistort_failure_is_reported() {
        let cam = distorted();
        assert!(cam.undistort(10.0, 10.0).is_ok());
        assert!(matches!(
            cam.undistort_with(10.0, 10.0, 1),
            Err(Error::DistortionInversion { .. })
        ));
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let cam = distorted();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let pt = Vector3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(1.5..10.0),
            );
            let j = cam.project_jacobian(&pt).unwrap();
            for c in 0..3 {
                let h = 1e-6 * pt[c].abs().max(1.0);
                let mut a = pt;
                let mut b = pt;
                a[c] += h;
                b[c] -= h;
                let fd = (cam.project(&a).unwrap() - cam.project(&b).unwrap()) / (2.0 * h);
                let err = (j.column(c) - fd).norm() / fd.norm().max(1e-12);
                assert!(err <= 1e-5, "column {c}: {err}");
            }
        }
    }

    #[test]
    fn generic_projection_agrees_with_analytic_jacobian() {
        let cam = distorted();
        let pt = Vector3::new(0.2, -0.1, 3.0);
        let j = cam.project_jacobian(&pt).unwrap();
        for c in 0..3 {
            let mut d = [Dual::cst(pt.x), Dual::cst(pt.y), Dual::cst(pt.z)];
            d[c] = Dual::var(pt[c]);
            let px = project_generic(&cam, &d);
            assert!((px[0].eps - j[(0, c)]).abs() < 1e-9);
            assert!((px[1].eps - j[(1, c)]).abs() < 1e-9);
        }
    }

    #[test]
    fn lever_arm_offsets_camera_center() {
        let cam = CameraModel {
            p_ic: Vector3::new(0.1, 0.0, 0.0),
            ..CameraModel::pinhole(400.0, 400.0, 320.0, 240.0, 640, 480)
        };
        let p = Vector3::new(1.0, 2.0, 3.0);
        let (r, c) = cam.extrinsics(&p, &Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(c, p + Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(r, nalgebra::Matrix3::identity());
    }

    #[test]
    fn point_on_optical_axis_projects_to_principal_point() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let cam = CameraModel {
                q_ic: Quaternion::from_euler(
                    r.random_range(-3.0..3.0),
                    r.random_range(-1.5..1.5),
                    r.random_range(-3.0..3.0),
                )
                .normalized()
                .unwrap(),
                p_ic: Vector3::new(
                    r.random_range(-0.2..0.2),
                    r.random_range(-0.2..0.2),
                    r.random_range(-0.2..0.2),
                ),
                ..distorted()
            };
            let q = Quaternion::from_euler(
                r.random_range(-3.0..3.0),
                r.random_range(-1.5..1.5),
                r.random_range(-3.0..3.0),
            )
            .normalized()
            .unwrap();
            let p = Vector3::new(
                r.random_range(-5.0..5.0),
                r.random_range(-5.0..5.0),
                r.random_range(-5.0..5.0),
            );
            // construct the point independently: camera axis in world = R(q)·R(q_ic)ᵀ·ẑ
            let axis = q.rotate(&cam.q_ic.conjugate().rotate(&Vector3::z()));
            let center = p + q.rotate(&cam.p_ic);
            let pw = center + axis * 4.0;
            let px = cam
                .project(&cam.world_to_camera(&p, &q.to_vector(), &pw))
                .unwrap();
            assert!((px - Vector2::new(cam.cx, cam.cy)).norm() < 1e-9);
        }
    }
}
