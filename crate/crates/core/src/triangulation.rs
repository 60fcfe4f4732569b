//! Inverse-depth triangulation of a feature over the pose trail and the
//! sensitivity of the converged point to the trail poses.
//!
//! The pipeline (two-view initializer, then Gauss–Newton) is generic over
//! [`Real`]. Seeding one pose parameter with a unit dual tangent yields the
//! exact derivative of the whole iteration, initializer included.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self as ad, Dual, Real, M3, V3, V4};
use crate::camera::{extrinsics_generic, CameraModel, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::state::layout::{pose_offset, POSE_DIM};

/// Body pose `(p, q)` with scalar-first `q`.
pub type Pose = (Vector3<f64>, Vector4<f64>);

/// World-to-camera rotation and camera center in the world frame.
type Extrinsic<S> = (M3<S>, V3<S>);

/// `θ*`, the per-view extrinsics, Gauss–Newton steps and convergence flag.
type GenericSolution<S> = (V3<S>, Vec<Extrinsic<S>>, usize, bool);

/// Normal-equation condition number above which the geometry is degenerate.
pub const MAX_NORMAL_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationConfig {
    /// Minimum angle between the first and last rays (deg).
    pub min_parallax_deg: f64,
    /// Maximum anchor depth (m).
    pub max_depth: f64,
    pub max_iter: usize,
    /// Step-norm threshold for convergence.
    pub tol: f64,
    /// Whether the initializer's dependence on the poses enters the derivative.
    pub include_init_sensitivity: bool,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            min_parallax_deg: 1.0,
            max_depth: 200.0,
            max_iter: 10,
            tol: 1e-10,
            include_init_sensitivity: true,
        }
    }
}

/// `θ = (x/z, y/z, 1/z)` in the anchor camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseDepthPoint {
    pub theta: Vector3<f64>,
}

impl InverseDepthPoint {
    pub fn depth(&self) -> f64 {
        1.0 / self.theta.z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangulationResult {
    pub theta_star: InverseDepthPoint,
    /// World position (m).
    pub p_star: Vector3<f64>,
    /// `∂θ*/∂x`, 3×n, when requested.
    pub dtheta_dx: Option<DMatrix<f64>>,
    /// Reprojection RMS over the track (px), when raw pixels are supplied.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn lift_pose<S: Real>(pose: &Pose) -> (V3<S>, V4<S>) {
    let (p, q) = pose;
    (
        [S::cst(p[0]), S::cst(p[1]), S::cst(p[2])],
        [S::cst(q[0]), S::cst(q[1]), S::cst(q[2]), S::cst(q[3])],
    )
}

fn check_inputs(poses: &[Pose], obs: &[Vector2<f64>]) -> Result<()> {
    if poses.len() != obs.len() {
        return Err(Error::InvalidInput(format!(
            "{} poses for {} observations",
            poses.len(),
            obs.len()
        )));
    }
    if obs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "track of length {}",
            obs.len()
        )));
    }
    Ok(())
}

/// Observation in normalized image coordinates.
pub(crate) type Obs<S> = [S; 2];

pub(crate) fn lift_obs<S: Real>(obs: &[Vector2<f64>]) -> Vec<Obs<S>> {
    obs.iter().map(|y| [S::cst(y.x), S::cst(y.y)]).collect()
}

fn bearing<S: Real>(y: &Obs<S>) -> V3<S> {
    [y[0], y[1], S::one()]
}

/// Midpoint of the common perpendicular of the first and last rays, as an
/// anchor-frame inverse-depth point.
pub(crate) fn init_generic<S: Real>(
    ext: &[Extrinsic<S>],
    obs: &[Obs<S>],
    cfg: &TriangulationConfig,
) -> Result<V3<S>> {
    let m = obs.len();
    let (r1, c1) = &ext[0];
    let (rm, cm) = &ext[m - 1];
    let d1 = ad::mat_t_vec3(r1, &bearing(&obs[0]));
    let dm = ad::mat_t_vec3(rm, &bearing(&obs[m - 1]));

    let a = ad::dot3(&d1, &d1);
    let b = ad::dot3(&d1, &dm);
    let c = ad::dot3(&dm, &dm);
    let cos = (b.value() / (a.value() * c.value()).sqrt()).clamp(-1.0, 1.0);
    let angle_deg = cos.acos().to_degrees();
    if !(angle_deg >= cfg.min_parallax_deg) {
        return Err(Error::LowParallax {
            angle_deg,
            min_deg: cfg.min_parallax_deg,
        });
    }
    let w = ad::sub3(c1, cm);
    let d = ad::dot3(&d1, &w);
    let e = ad::dot3(&dm, &w);
    let denom = a * c - b * b;
    let s = (b * e - c * d) / denom;
    let t = (a * e - b * d) / denom;
    let on1 = ad::add3(c1, &ad::scale3(&d1, s));
    let onm = ad::add3(cm, &ad::scale3(&dm, t));
    let mid = ad::scale3(&ad::add3(&on1, &onm), S::cst(0.5));

    let x = ad::matvec3(r1, &ad::sub3(&mid, c1));
    let z = x[2].value();
    if z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: z });
    }
    if z > cfg.max_depth {
        return Err(Error::TooFar { depth: z });
    }
    Ok([x[0] / x[2], x[1] / x[2], S::one() / x[2]])
}

/// Per-observation `C_i`, `t_i` relative to the anchor.
fn relative_geometry<S: Real>(ext: &[Extrinsic<S>]) -> Vec<Extrinsic<S>> {
    let (r1, c1) = &ext[0];
    let r1t = ad::transpose3(r1);
    ext.iter()
        .map(|(ri, ci)| (ad::matmul3(ri, &r1t), ad::matvec3(ri, &ad::sub3(c1, ci))))
        .collect()
}

/// `JᵀJ` and `Jᵀφ` of the stacked normalized-coordinate residual at `θ`.
pub(crate) fn normal_equations<S: Real>(
    rel: &[Extrinsic<S>],
    obs: &[Obs<S>],
    theta: &V3<S>,
) -> Result<(M3<S>, V3<S>)> {
    let mut jtj = [[S::zero(); 3]; 3];
    let mut jtr = [S::zero(); 3];
    let dir = [theta[0], theta[1], S::one()];
    for ((c, t), y) in rel.iter().zip(obs) {
        let h = ad::add3(&ad::matvec3(c, &dir), &ad::scale3(t, theta[2]));
        if h[2].value() <= 0.0 {
            return Err(Error::BehindCamera {
                depth: h[2].value() / theta[2].value(),
            });
        }
        let inv = S::one() / h[2];
        let pu = h[0] * inv;
        let pv = h[1] * inv;
        let res = [y[0] - pu, y[1] - pv];
        // ∂h/∂θ = [C[:,0], C[:,1], t]; J_φ = −∂(h₁/h₃, h₂/h₃)/∂θ
        let dh = [
            [c[0][0], c[0][1], t[0]],
            [c[1][0], c[1][1], t[1]],
            [c[2][0], c[2][1], t[2]],
        ];
        let mut j = [[S::zero(); 3]; 2];
        for k in 0..3 {
            j[0][k] = -(dh[0][k] - pu * dh[2][k]) * inv;
            j[1][k] = -(dh[1][k] - pv * dh[2][k]) * inv;
        }
        for r in 0..3 {
            for cc in 0..3 {
                jtj[r][cc] += j[0][r] * j[0][cc] + j[1][r] * j[1][cc];
            }
            jtr[r] += j[0][r] * res[0] + j[1][r] * res[1];
        }
    }
    Ok((jtj, jtr))
}

fn condition(a: &M3<impl Real>) -> f64 {
    let m = Matrix3::from_fn(|r, c| a[r][c].value());
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Gauss–Newton on the anchor-relative inverse depth. Returns `(θ*, steps,
/// converged)`; the stopping decisions depend only on values.
pub(crate) fn refine_generic<S: Real>(
    theta0: V3<S>,
    ext: &[Extrinsic<S>],
    obs: &[Obs<S>],
    cfg: &TriangulationConfig,
) -> Result<(V3<S>, usize, bool)> {
    let rel = relative_geometry(ext);
    let mut theta = theta0;
    let mut converged = false;
    let mut steps = 0;
    for _ in 0..cfg.max_iter {
        let (a, g) = normal_equations(&rel, obs, &theta)?;
        let cond = condition(&a);
        if !(cond <= MAX_NORMAL_CONDITION) {
            return Err(Error::DegenerateGeometry { condition: cond });
        }
        let delta = ad::solve3(&a, &g);
        theta = ad::sub3(&theta, &delta);
        steps += 1;
        if ad::values3(&delta).norm() < cfg.tol {
            converged = true;
            break;
        }
    }
    if theta[2].value() <= 0.0 {
        return Err(Error::BehindCamera {
            depth: 1.0 / theta[2].value(),
        });
    }
    Ok((theta, steps, converged))
}

/// World position of an anchor-frame inverse-depth point.
pub(crate) fn point_from_theta<S: Real>(theta: &V3<S>, anchor: &Extrinsic<S>) -> V3<S> {
    let inv = S::one() / theta[2];
    let local = [theta[0] * inv, theta[1] * inv, inv];
    ad::add3(&ad::mat_t_vec3(&anchor.0, &local), &anchor.1)
}

/// Full pipeline on generic poses; returns `θ*`, steps and convergence.
pub(crate) fn triangulate_generic<S: Real>(
    cam: &CameraModel,
    poses: &[(V3<S>, V4<S>)],
    obs: &[Obs<S>],
    cfg: &TriangulationConfig,
) -> Result<GenericSolution<S>> {
    let ext: Vec<Extrinsic<S>> = poses
        .iter()
        .map(|(p, q)| extrinsics_generic(cam, p, q))
        .collect();
    let theta0 = init_generic(&ext, obs, cfg)?;
    let theta0 = if cfg.include_init_sensitivity {
        theta0
    } else {
        [
            S::cst(theta0[0].value()),
            S::cst(theta0[1].value()),
            S::cst(theta0[2].value()),
        ]
    };
    let (theta, steps, converged) = refine_generic(theta0, &ext, obs, cfg)?;
    Ok((theta, ext, steps, converged))
}

/// Two-view initializer from the first and last observations.
pub fn two_view_init(
    cam: &CameraModel,
    poses: &[Pose],
    obs: &[Vector2<f64>],
    cfg: &TriangulationConfig,
) -> Result<InverseDepthPoint> {
    check_inputs(poses, obs)?;
    let ext: Vec<_> = poses
        .iter()
        .map(|pose| {
            let (p, q) = lift_pose::<f64>(pose);
            extrinsics_generic(cam, &p, &q)
        })
        .collect();
    let theta = init_generic(&ext, &lift_obs::<f64>(obs), cfg)?;
    Ok(InverseDepthPoint {
        theta: Vector3::from(theta),
    })
}

/// Gauss–Newton refinement from `theta0`. `pixels`, when given, are the raw
/// observations used for the reported reprojection RMS.
pub fn gauss_newton_refine(
    theta0: &InverseDepthPoint,
    cam: &CameraModel,
    poses: &[Pose],
    obs: &[Vector2<f64>],
    pixels: Option<&[Vector2<f64>]>,
    cfg: &TriangulationConfig,
) -> Result<TriangulationResult> {
    check_inputs(poses, obs)?;
    let ext: Vec<_> = poses
        .iter()
        .map(|pose| {
            let (p, q) = lift_pose::<f64>(pose);
            extrinsics_generic(cam, &p, &q)
        })
        .collect();
    let t0 = theta0.theta;
    let (theta, iterations, converged) =
        refine_generic([t0.x, t0.y, t0.z], &ext, &lift_obs::<f64>(obs), cfg)?;
    finish(cam, theta, &ext, pixels, iterations, converged)
}

fn finish(
    cam: &CameraModel,
    theta: V3<f64>,
    ext: &[(M3<f64>, V3<f64>)],
    pixels: Option<&[Vector2<f64>]>,
    iterations: usize,
    converged: bool,
) -> Result<TriangulationResult> {
    let p_star = Vector3::from(point_from_theta(&theta, &ext[0]));
    let residual_rms = match pixels {
        Some(px) => {
            let mut ss = 0.0;
            for ((r, c), y) in ext.iter().zip(px) {
                let rm = Matrix3::from_fn(|i, j| r[i][j]);
                let pc = rm * (p_star - Vector3::from(*c));
                ss += (cam.project(&pc)? - y).norm_squared();
            }
            (ss / px.len() as f64).sqrt()
        }
        None => f64::NAN,
    };
    Ok(TriangulationResult {
        theta_star: InverseDepthPoint {
            theta: Vector3::from(theta),
        },
        p_star,
        dtheta_dx: None,
        residual_rms,
        iterations,
        converged,
    })
}

/// Initializer followed by Gauss–Newton.
pub fn triangulate(
    cam: &CameraModel,
    poses: &[Pose],
    obs: &[Vector2<f64>],
    pixels: Option<&[Vector2<f64>]>,
    cfg: &TriangulationConfig,
) -> Result<TriangulationResult> {
    check_inputs(poses, obs)?;
    let lifted: Vec<_> = poses.iter().map(lift_pose::<f64>).collect();
    let (theta, ext, iterations, converged) =
        triangulate_generic(cam, &lifted, &lift_obs::<f64>(obs), cfg)?;
    finish(cam, theta, &ext, pixels, iterations, converged)
}

/// Poses with the tangent of one parameter (`pose`, `k`) set to 1.
pub(crate) fn seeded_poses(poses: &[Pose], pose: usize, k: usize) -> Vec<(V3<Dual>, V4<Dual>)> {
    poses
        .iter()
        .enumerate()
        .map(|(i, pq)| {
            let (mut p, mut q) = lift_pose::<Dual>(pq);
            if i == pose {
                if k < 3 {
                    p[k].eps = 1.0;
                } else {
                    q[k - 3].eps = 1.0;
                }
            }
            (p, q)
        })
        .collect()
}

/// `∂θ*/∂x` (3×`state_dim`) where observation `i` sits in trail slot
/// `slots[i]`. Columns outside the observing pose blocks are zero.
pub fn differentiate_triangulation(
    cam: &CameraModel,
    poses: &[Pose],
    obs: &[Vector2<f64>],
    slots: &[usize],
    state_dim: usize,
    cfg: &TriangulationConfig,
) -> Result<DMatrix<f64>> {
    check_inputs(poses, obs)?;
    if slots.len() != poses.len() {
        return Err(Error::InvalidInput(
            "one slot per observation required".into(),
        ));
    }
    let obs = lift_obs::<Dual>(obs);
    let mut out = DMatrix::zeros(3, state_dim);
    for (i, slot) in slots.iter().enumerate() {
        for k in 0..POSE_DIM {
            let col = pose_offset(*slot) + k;
            if col >= state_dim {
                return Err(Error::InvalidInput(format!(
                    "slot {slot} outside the state"
                )));
            }
            let seeded = seeded_poses(poses, i, k);
            let (theta, _, _, _) = triangulate_generic(cam, &seeded, &obs, cfg)?;
            for r in 0..3 {
                out[(r, col)] = theta[r].eps;
            }
        }
    }
    Ok(out)
}
