//! Monte-Carlo check of two Gaussian summaries of a triangulated feature.
//!
//! The feature position `p*(x, y)` is a function of the trail poses `x` and
//! the pixels `y`. Sampling both gives its true distribution. The full
//! first-order summary propagates both sources, `J_x·P·J_xᵀ + σ²·J_y·J_yᵀ`;
//! the conventional one treats the poses as known constants and keeps only
//! the pixel term.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self as ad, Dual, Real};
use crate::error::{Error, Result};
use crate::simulator::{mc_scenario_fig3, perturb_poses, TrailScenario};
use crate::state::GaussianMoments;
use crate::triangulation::{
    lift_obs, lift_pose, point_from_theta, seeded_poses, triangulate, triangulate_generic, Pose,
    TriangulationConfig,
};

/// Minimum Monte-Carlo sample count.
pub const MIN_SAMPLES: usize = 10_000;

/// `χ²₂` quantile at 95 %: `−2·ln 0.05`.
const CHI2_2_95: f64 = 5.991464547107979;

/// 95 % ellipse of a planar Gaussian marginal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-major then semi-minor axis.
    pub semi_axes: [f64; 2],
    /// Major-axis direction from the first plane axis (deg, in (−90, 90]).
    pub angle_deg: f64,
}

impl Ellipse {
    pub fn from_moments(mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Self {
        let eig = cov.symmetric_eigen();
        let (imax, imin) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let axis = eig.eigenvectors.column(imax);
        Self {
            center: [mean.x, mean.y],
            semi_axes: [
                (CHI2_2_95 * eig.eigenvalues[imax].max(0.0)).sqrt(),
                (CHI2_2_95 * eig.eigenvalues[imin].max(0.0)).sqrt(),
            ],
            angle_deg: wrap_axis(axis[1].atan2(axis[0]).to_degrees()),
        }
    }
}

fn wrap_axis(mut a: f64) -> f64 {
    while a <= -90.0 {
        a += 180.0;
    }
    while a > 90.0 {
        a -= 180.0;
    }
    a
}

/// Angle between two undirected axes (deg, in [0, 90]).
pub fn axis_difference_deg(a: f64, b: f64) -> f64 {
    wrap_axis(a - b).abs()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// KL from the Monte-Carlo moments to this summary (nats); zero for the
    /// Monte-Carlo summary itself.
    pub kl_from_mc: f64,
    /// 95 % ellipses of the x–y and x–z marginals.
    pub ellipse_xy: Ellipse,
    pub ellipse_xz: Ellipse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_mc: usize,
    /// Draws whose triangulation failed and were left out.
    pub n_failed: usize,
    pub monte_carlo: Summary,
    /// Pose and pixel uncertainty propagated.
    pub full: Summary,
    /// Poses treated as known constants.
    pub pose_free: Summary,
    /// Largest disagreement between the full summary's ellipse axes and the
    /// Monte-Carlo ones over both planes (deg).
    pub full_axis_error_deg: f64,
    pub pose_free_axis_error_deg: f64,
    pub runtime_s: f64,
}

/// `∂p*/∂x` over 6 error parameters per pose and `∂p*/∂y` over raw pixels,
/// at the nominal poses and pixels.
pub fn feature_jacobians(
    scn: &TrailScenario,
    pixels: &[Vector2<f64>],
    cfg: &TriangulationConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let cam = &scn.camera;
    let m = scn.poses.len();
    let normalized: Vec<Vector2<f64>> = pixels
        .iter()
        .map(|p| cam.undistort(p.x, p.y))
        .collect::<Result<_>>()?;

    let point_tangent =
        |poses: &[([Dual; 3], [Dual; 4])], obs: &[[Dual; 2]]| -> Result<Vector3<f64>> {
            let (theta, ext, _, _) = triangulate_generic(cam, poses, obs, cfg)?;
            let p = point_from_theta(&theta, &ext[0]);
            Ok(Vector3::new(p[0].eps, p[1].eps, p[2].eps))
        };

    let obs_const = lift_obs::<Dual>(&normalized);
    let mut jx = DMatrix::zeros(3, 6 * m);
    for (i, (_, q)) in scn.poses.iter().enumerate() {
        let mut j7 = DMatrix::zeros(3, 7);
        for k in 0..7 {
            j7.set_column(
                k,
                &point_tangent(&seeded_poses(&scn.poses, i, k), &obs_const)?,
            );
        }
        // δq = ½·q ⊗ (0, δθ)
        let mut g = DMatrix::zeros(7, 6);
        for k in 0..3 {
            g[(k, k)] = 1.0;
            let mut e = [0.0; 4];
            e[k + 1] = 0.5;
            let col = ad::quat_mul(&[q[0], q[1], q[2], q[3]], &e);
            for r in 0..4 {
                g[(3 + r, 3 + k)] = col[r];
            }
        }
        jx.view_mut((0, 6 * i), (3, 6)).copy_from(&(j7 * g));
    }

    let poses_const: Vec<_> = scn.poses.iter().map(lift_pose::<Dual>).collect();
    let mut jy = DMatrix::zeros(3, 2 * m);
    for i in 0..m {
        // raw pixel → normalized coordinates through the distortion inverse
        let dn = (Matrix2::new(cam.fx, 0.0, 0.0, cam.fy) * cam.distort_jacobian(&normalized[i]))
            .try_inverse()
            .ok_or(Error::DegenerateGeometry {
                condition: f64::INFINITY,
            })?;
        let mut jn = DMatrix::zeros(3, 2);
        for c in 0..2 {
            let mut obs = obs_const.clone();
            obs[i][c] = Dual::var(obs[i][c].value());
            jn.set_column(c, &point_tangent(&poses_const, &obs)?);
        }
        let dn = DMatrix::from_column_slice(2, 2, dn.as_slice());
        jy.view_mut((0, 2 * i), (3, 2)).copy_from(&(jn * dn));
    }
    Ok((jx, jy))
}

/// Feature position triangulated from the given poses and raw pixels.
pub fn feature_position(
    scn: &TrailScenario,
    poses: &[Pose],
    pixels: &[Vector2<f64>],
    cfg: &TriangulationConfig,
) -> Result<Vector3<f64>> {
    let normalized: Vec<Vector2<f64>> = pixels
        .iter()
        .map(|p| scn.camera.undistort(p.x, p.y))
        .collect::<Result<_>>()?;
    Ok(triangulate(&scn.camera, poses, &normalized, None, cfg)?.p_star)
}

fn summarize(
    mean: Vector3<f64>,
    cov: Matrix3<f64>,
    mc: Option<&GaussianMoments>,
) -> Result<Summary> {
    let g = GaussianMoments::new(
        DVector::from_column_slice(mean.as_slice()),
        DMatrix::from_column_slice(3, 3, cov.as_slice()),
    )?;
    let kl_from_mc = match mc {
        Some(mc) => mc.kl_divergence(&g)?,
        None => 0.0,
    };
    let plane = |a: usize, b: usize| {
        Ellipse::from_moments(
            &Vector2::new(mean[a], mean[b]),
            &Matrix2::new(cov[(a, a)], cov[(a, b)], cov[(b, a)], cov[(b, b)]),
        )
    };
    Ok(Summary {
        mean,
        cov,
        kl_from_mc,
        ellipse_xy: plane(0, 1),
        ellipse_xz: plane(0, 2),
    })
}

fn axis_error(a: &Summary, mc: &Summary) -> f64 {
    axis_difference_deg(a.ellipse_xy.angle_deg, mc.ellipse_xy.angle_deg).max(axis_difference_deg(
        a.ellipse_xz.angle_deg,
        mc.ellipse_xz.angle_deg,
    ))
}

/// Monte-Carlo distribution of the triangulated feature against the two
/// first-order summaries.
pub fn compare_update_models(scn: &TrailScenario) -> Result<ComparisonReport> {
    let start = Instant::now();
    if scn.n_mc < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "n_mc = {} below the minimum of {MIN_SAMPLES}",
            scn.n_mc
        )));
    }
    let cfg = TriangulationConfig::default();
    let pixels = scn.nominal_pixels()?;
    let center = feature_position(scn, &scn.poses, &pixels, &cfg)?;
    let (jx, jy) = feature_jacobians(scn, &pixels, &cfg)?;

    let draws = mc_scenario_fig3(scn)?;
    let mut points = Vec::with_capacity(scn.n_mc);
    let mut n_failed = 0;
    for (dx, dy) in draws.pose_errors.iter().zip(&draws.pixel_errors) {
        let poses = perturb_poses(&scn.poses, dx);
        let px: Vec<Vector2<f64>> = pixels
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vector2::new(dy[2 * i], dy[2 * i + 1]))
            .collect();
        match feature_position(scn, &poses, &px, &cfg) {
            Ok(p) => points.push(DVector::from_column_slice(p.as_slice())),
            Err(_) => n_failed += 1,
        }
    }
    let mc = GaussianMoments::from_samples(&points)?;
    if mc.cov.clone().cholesky().is_none() {
        return Err(Error::InsufficientData(
            "Monte-Carlo covariance of the feature is degenerate".into(),
        ));
    }

    let pixel_term = &jy * jy.transpose() * scn.pixel_sigma.powi(2);
    let pose_term = &jx * &scn.pose_cov * jx.transpose();
    let to3 = |m: &DMatrix<f64>| Matrix3::from_fn(|r, c| m[(r, c)]);
    let mc_summary = summarize(
        Vector3::new(mc.mean[0], mc.mean[1], mc.mean[2]),
        to3(&mc.cov),
        None,
    )?;
    let full = summarize(center, to3(&(pose_term + &pixel_term)), Some(&mc))?;
    let pose_free = summarize(center, to3(&pixel_term), Some(&mc))?;
    Ok(ComparisonReport {
        n_mc: scn.n_mc,
        n_failed,
        full_axis_error_deg: axis_error(&full, &mc_summary),
        pose_free_axis_error_deg: axis_error(&pose_free, &mc_summary),
        monte_carlo: mc_summary,
        full,
        pose_free,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
