//! Per-track measurement update with the feature position integrated out.
//!
//! The predicted pixels of a track depend on the state both directly, through
//! the observing camera poses, and through the triangulated point. Both paths
//! enter `H`: every pose parameter is seeded as a dual tangent and pushed
//! through triangulation and reprojection in one pass.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::autodiff as ad;
use crate::camera::{project_generic, CameraModel, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::state::layout::{pose_offset, POSE_DIM};
use crate::state::FilterState;
use crate::tracks::FeatureTrack;
use crate::triangulation::{
    lift_obs, point_from_theta, seeded_poses, triangulate, triangulate_generic, Pose,
    TriangulationConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualUpdateConfig {
    /// Pixel noise std dev.
    pub sigma_uv: f64,
    /// Minimum number of observations for a track to be used.
    pub m_min: usize,
    /// Chi-square gate confidence.
    pub gate_confidence: f64,
    pub triangulation: TriangulationConfig,
}

impl Default for VisualUpdateConfig {
    fn default() -> Self {
        Self {
            sigma_uv: 1.0,
            m_min: 3,
            gate_confidence: 0.95,
            triangulation: TriangulationConfig::default(),
        }
    }
}

impl VisualUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_uv > 0.0) {
            return Err(Error::InvalidInput("sigma_uv must be positive".into()));
        }
        if self.m_min < 2 {
            return Err(Error::InvalidInput("m_min must be at least 2".into()));
        }
        if !(self.gate_confidence > 0.0 && self.gate_confidence < 1.0) {
            return Err(Error::InvalidInput(
                "gate confidence must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateProposal {
    pub feature_id: u64,
    /// Observed minus predicted pixels, `2m`.
    pub innovation: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mahalanobis: f64,
    pub dof: usize,
    pub accepted: bool,
    pub p_star: Vector3<f64>,
}

/// Chi-square gate: accepted iff `mahalanobis` does not exceed the quantile
/// at `confidence` with `dof` degrees of freedom.
pub fn gate(mahalanobis: f64, dof: usize, confidence: f64) -> bool {
    if !(mahalanobis >= 0.0) || dof == 0 {
        return false;
    }
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    mahalanobis <= chi.inverse_cdf(confidence)
}

/// Inputs of the measurement model for one track: poses of the observing
/// slots, raw pixels and undistorted normalized coordinates.
pub struct TrackView {
    pub slots: Vec<usize>,
    pub poses: Vec<Pose>,
    pub pixels: Vec<Vector2<f64>>,
    pub normalized: Vec<Vector2<f64>>,
}

impl TrackView {
    pub fn new(
        track: &FeatureTrack,
        current_frame: usize,
        state: &FilterState,
        cam: &CameraModel,
    ) -> Result<Self> {
        let slots = track.slots(current_frame);
        if let Some(s) = slots.iter().find(|s| **s >= state.trail_len()) {
            return Err(Error::InvalidInput(format!(
                "track {} refers to slot {s} outside the trail",
                track.feature_id
            )));
        }
        let poses = slots.iter().map(|s| state.pose(*s)).collect();
        let pixels: Vec<Vector2<f64>> = track
            .observations
            .iter()
            .map(|o| Vector2::new(o.u, o.v))
            .collect();
        let normalized = pixels
            .iter()
            .map(|p| cam.undistort(p.x, p.y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            poses,
            pixels,
            normalized,
        })
    }
}

/// Predicted pixels of every observation, with the point triangulated from
/// the same poses.
pub fn predict_pixels(
    view: &TrackView,
    cam: &CameraModel,
    cfg: &TriangulationConfig,
) -> Result<(Vec<Vector2<f64>>, Vector3<f64>)> {
    let res = triangulate(cam, &view.poses, &view.normalized, None, cfg)?;
    if !res.converged {
        return Err(Error::NotConverged {
            iterations: res.iterations,
        });
    }
    let mut out = Vec::with_capacity(view.poses.len());
    for (p, q) in &view.poses {
        out.push(cam.project(&cam.world_to_camera(p, q, &res.p_star))?);
    }
    Ok((out, res.p_star))
}

/// Total derivative of the stacked predicted pixels with respect to the state.
pub fn measurement_jacobian(
    view: &TrackView,
    cam: &CameraModel,
    state_dim: usize,
    cfg: &TriangulationConfig,
) -> Result<DMatrix<f64>> {
    let m = view.poses.len();
    let obs = lift_obs::<ad::Dual>(&view.normalized);
    let mut h = DMatrix::zeros(2 * m, state_dim);
    for (i, slot) in view.slots.iter().enumerate() {
        for k in 0..POSE_DIM {
            let seeded = seeded_poses(&view.poses, i, k);
            let (theta, ext, _, _) = triangulate_generic(cam, &seeded, &obs, cfg)?;
            let pw = point_from_theta(&theta, &ext[0]);
            let col = pose_offset(*slot) + k;
            for (j, (r, c)) in ext.iter().enumerate() {
                let pc = ad::matvec3(r, &ad::sub3(&pw, c));
                if pc[2].re <= MIN_DEPTH {
                    return Err(Error::BehindCamera { depth: pc[2].re });
                }
                let px = project_generic(cam, &pc);
                h[(2 * j, col)] = px[0].eps;
                h[(2 * j + 1, col)] = px[1].eps;
            }
        }
    }
    Ok(h)
}

/// Builds the stacked update of one track. Triangulation failures surface as
/// errors; the caller treats them as rejections.
pub fn build_proposal(
    track: &FeatureTrack,
    current_frame: usize,
    state: &FilterState,
    cam: &CameraModel,
    cfg: &VisualUpdateConfig,
) -> Result<UpdateProposal> {
    if track.len() < cfg.m_min {
        return Err(Error::InsufficientData(format!(
            "track {} has {} observations, need {}",
            track.feature_id,
            track.len(),
            cfg.m_min
        )));
    }
    let view = TrackView::new(track, current_frame, state, cam)?;
    let (predicted, p_star) = predict_pixels(&view, cam, &cfg.triangulation)?;
    let m = view.poses.len();
    let innovation = DVector::from_fn(2 * m, |i, _| {
        view.pixels[i / 2][i % 2] - predicted[i / 2][i % 2]
    });
    let h = measurement_jacobian(&view, cam, state.dim(), &cfg.triangulation)?;
    let r = DMatrix::identity(2 * m, 2 * m) * cfg.sigma_uv.powi(2);

    let s = &h * &state.cov * h.transpose() + &r;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::NumericalFailure {
        condition: f64::INFINITY,
    })?;
    let mahalanobis = innovation.dot(&chol.solve(&innovation)).max(0.0);
    let dof = 2 * m;
    Ok(UpdateProposal {
        feature_id: track.feature_id,
        accepted: gate(mahalanobis, dof, cfg.gate_confidence),
        innovation,
        h,
        r,
        mahalanobis,
        dof,
        p_star,
    })
}

/// EKF update with an accepted proposal. On failure the state is unchanged.
pub fn apply_update(state: &mut FilterState, proposal: &UpdateProposal) -> Result<()> {
    if !proposal.accepted {
        return Err(Error::InvalidInput(format!(
            "proposal for track {} was rejected by the gate",
            proposal.feature_id
        )));
    }
    state.update(&proposal.innovation, &proposal.h, &proposal.r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::layout::*;
    use crate::tracks::Observation;
    use crate::triangulation::tests::{arc_poses, observe, test_camera};
    use rand::{Rng, SeedableRng};

    /// State whose trail holds `poses` (oldest in the highest slot) and
    /// whose current pose equals the newest one.
    fn state_with_trail(poses: &[Pose], extra_slots: usize, seed: u64) -> FilterState {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let trail = poses.len() + extra_slots;
        let n = state_dim(trail);
        let mut mean = DVector::zeros(n);
        let newest = poses.last().unwrap();
        mean.fixed_rows_mut::<3>(POS).copy_from(&newest.0);
        mean.fixed_rows_mut::<4>(QUAT).copy_from(&newest.1);
        mean.fixed_rows_mut::<3>(ACC_SCALE).fill(1.0);
        for (i, (p, q)) in poses.iter().rev().enumerate() {
            mean.fixed_rows_mut::<3>(pose_offset(i)).copy_from(p);
            mean.fixed_rows_mut::<4>(pose_offset(i) + 3).copy_from(q);
        }
        for s in poses.len()..trail {
            mean[pose_offset(s) + 3] = 1.0;
        }
        let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0)) * 0.01;
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 1e-5;
        FilterState::new(mean, cov).unwrap()
    }

    fn track_from(pixels: &[Vector2<f64>], id: u64) -> (FeatureTrack, usize) {
        let m = pixels.len();
        let observations = pixels
            .iter()
            .enumerate()
            .map(|(f, p)| Observation {
                frame: f,
                u: p.x,
                v: p.y,
            })
            .collect();
        (
            FeatureTrack {
                feature_id: id,
                observations,
                anchor_slot: m - 1,
            },
            m - 1,
        )
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn gate_boundaries() {
        // closed-form CDF for 6 dof: 1 − e^{−x/2}(1 + x/2 + x²/8), inverted by bisection
        let cdf6 = |x: f64| 1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0 + x * x / 8.0);
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf6(mid) < 0.95 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let quantile = 0.5 * (lo + hi);
        assert!((quantile - 12.5916).abs() < 1e-4);
        assert!(gate(0.0, 4, 0.95));
        assert!(gate(12.59, 6, 0.95));
        assert!(gate(quantile - 1e-9, 6, 0.95));
        assert!(!gate(quantile + 1e-9, 6, 0.95));
        assert!(!gate(1e6, 6, 0.95));
        assert!(!gate(f64::NAN, 6, 0.95));
    }

    #[test]
    fn noiseless_track_has_zero_innovation() {
        let cam = test_camera();
        let mut r = rng(1);
        let poses = arc_poses(5, 1.0, &mut r);
        let (px, _) = observe(&cam, &poses, &Vector3::new(6.0, 0.5, 0.2));
        let state = state_with_trail(&poses, 2, 2);
        let (track, frame) = track_from(&px, 3);
        let prop =
            build_proposal(&track, frame, &state, &cam, &VisualUpdateConfig::default()).unwrap();
        assert!(prop.innovation.amax() < 1e-6);
        assert!(prop.accepted);
        assert_eq!(prop.dof, 10);
    }

    /// Finite-difference oracle of the full prediction pipeline, with the
    /// triangulation re-run at each perturbed state.
    fn fd_jacobian(view: &TrackView, cam: &CameraModel, n: usize, h: f64) -> DMatrix<f64> {
        let m = view.poses.len();
        let mut out = DMatrix::zeros(2 * m, n);
        for (i, slot) in view.slots.iter().enumerate() {
            for k in 0..POSE_DIM {
                let eval = |sign: f64| {
                    let mut poses = view.poses.clone();
                    if k < 3 {
                        poses[i].0[k] += sign * h;
                    } else {
                        poses[i].1[k - 3] += sign * h;
                    }
                    let v = TrackView {
                        slots: view.slots.clone(),
                        poses,
                        pixels: view.pixels.clone(),
                        normalized: view.normalized.clone(),
                    };
                    predict_pixels(&v, cam, &TriangulationConfig::default())
                        .unwrap()
                        .0
                };
                let (plus, minus) = (eval(1.0), eval(-1.0));
                for j in 0..m {
                    let d = (plus[j] - minus[j]) / (2.0 * h);
                    out[(2 * j, pose_offset(*slot) + k)] = d.x;
                    out[(2 * j + 1, pose_offset(*slot) + k)] = d.y;
                }
            }
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cam = test_camera();
        let mut r = rng(3);
        for case in 0..20 {
            let m = r.random_range(3..8);
            let poses = arc_poses(m, 1.2, &mut r);
            let pw = Vector3::new(
                r.random_range(3.0..8.0),
                r.random_range(-1.5..1.5),
                r.random_range(-1.0..1.0),
            );
            let (mut px, _) = observe(&cam, &poses, &pw);
            for p in px.iter_mut() {
                *p += Vector2::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
            }
            let state = state_with_trail(&poses, 1, case);
            let (track, frame) = track_from(&px, case);
            let view = TrackView::new(&track, frame, &state, &cam).unwrap();
            let h = measurement_jacobian(&view, &cam, state.dim(), &TriangulationConfig::default())
                .unwrap();
            let fd = fd_jacobian(&view, &cam, state.dim(), 1e-6);
            let err = (&h - &fd).norm() / fd.norm();
            assert!(err <= 1e-4, "case {case}: {err}");
        }
    }

    #[test]
    fn outlier_frame_is_gated_out() {
        let cam = test_camera();
        let mut r = rng(4);
        let poses = arc_poses(5, 1.0, &mut r);
        let (mut px, _) = observe(&cam, &poses, &Vector3::new(6.0, 0.2, -0.3));
        px[2].x += 50.0;
        let mut state = state_with_trail(&poses, 0, 5);
        state.cov = DMatrix::identity(state.dim(), state.dim()) * 1e-6;
        let (track, frame) = track_from(&px, 1);
        let prop =
            build_proposal(&track, frame, &state, &cam, &VisualUpdateConfig::default()).unwrap();
        let quantile = ChiSquared::new(10.0).unwrap().inverse_cdf(0.95);
        assert!(prop.mahalanobis > quantile);
        assert!(!prop.accepted);
        let mut s = state.clone();
        assert!(apply_update(&mut s, &prop).is_err());
        assert_eq!(s, state);
    }

    #[test]
    fn zero_innovation_update_keeps_mean() {
        let cam = test_camera();
        let mut r = rng(6);
        let poses = arc_poses(4, 1.0, &mut r);
        let (px, _) = observe(&cam, &poses, &Vector3::new(5.0, 0.0, 0.0));
        let state = state_with_trail(&poses, 0, 7);
        let (track, frame) = track_from(&px, 1);
        let mut prop =
            build_proposal(&track, frame, &state, &cam, &VisualUpdateConfig::default()).unwrap();
        prop.innovation.fill(0.0);
        let mut s = state.clone();
        apply_update(&mut s, &prop).unwrap();
        assert!((&s.mean - &state.mean).amax() < 1e-12);
        assert!(s.cov.trace() <= state.cov.trace());
        assert!(s.position_cov_trace() <= state.position_cov_trace());
    }

    #[test]
    fn perfect_track_reduces_pose_error() {
        let cam = test_camera();
        let mut r = rng(8);
        let truth = arc_poses(6, 1.5, &mut r);
        let landmarks: Vec<Vector3<f64>> = (0..15)
            .map(|_| {
                Vector3::new(
                    r.random_range(4.0..8.0),
                    r.random_range(-2.0..2.0),
                    r.random_range(-1.0..1.0),
                )
            })
            .collect();
        // drift the newest trail pose; uncertainty concentrated there
        let mut drifted = truth.clone();
        drifted[5].0 += Vector3::new(0.05, -0.04, 0.03);
        let mut state = state_with_trail(&drifted, 0, 9);
        state.cov = DMatrix::identity(state.dim(), state.dim()) * 1e-8;
        for k in 0..3 {
            state.cov[(pose_offset(0) + k, pose_offset(0) + k)] = 1e-2;
        }
        let err0 = (state.pose(0).0 - truth[5].0).norm();
        let cfg = VisualUpdateConfig {
            gate_confidence: 0.999999,
            ..Default::default()
        };
        for (id, pw) in landmarks.iter().enumerate() {
            let (px, _) = observe(&cam, &truth, pw);
            let (track, frame) = track_from(&px, id as u64);
            if let Ok(prop) = build_proposal(&track, frame, &state, &cam, &cfg) {
                if prop.accepted {
                    apply_update(&mut state, &prop).unwrap();
                }
            }
        }
        let err1 = (state.pose(0).0 - truth[5].0).norm();
        assert!(err1 < err0, "{err1} !< {err0}");
    }

    #[test]
    fn update_matches_dense_conditioning_on_two_poses() {
        // linearized model: the Kalman posterior must equal Gaussian
        // conditioning of the joint (x, Hx + e)
        let cam = test_camera();
        let mut r = rng(10);
        let poses = arc_poses(3, 1.0, &mut r);
        let (px, _) = observe(&cam, &poses, &Vector3::new(4.0, 0.3, 0.1));
        let mut px = px;
        px[1].x += 0.7;
        let state = state_with_trail(&poses, 0, 11);
        let (track, frame) = track_from(&px, 0);
        let cfg = VisualUpdateConfig {
            m_min: 2,
            ..Default::default()
        };
        let prop = build_proposal(&track, frame, &state, &cam, &cfg).unwrap();
        let pxy = &state.cov * prop.h.transpose();
        let pyy = &prop.h * &pxy + &prop.r;
        let gain = &pxy * pyy.clone().try_inverse().unwrap();
        let mean = &state.mean + &gain * &prop.innovation;
        let cov = &state.cov - &gain * pxy.transpose();
        let mut oracle = FilterState::new(mean, cov).unwrap();
        oracle.renormalize_quaternions();
        let mut s = state.clone();
        apply_update(&mut s, &prop).unwrap();
        assert!((&s.mean - &oracle.mean).amax() < 1e-9);
        assert!((&s.cov - &oracle.cov).amax() < 1e-9);
    }

    #[test]
    fn short_tracks_are_refused() {
        let cam = test_camera();
        let mut r = rng(12);
        let poses = arc_poses(2, 1.0, &mut r);
        let (px, _) = observe(&cam, &poses, &Vector3::new(4.0, 0.0, 0.0));
        let state = state_with_trail(&poses, 0, 13);
        let (track, frame) = track_from(&px, 0);
        assert!(matches!(
            build_proposal(&track, frame, &state, &cam, &VisualUpdateConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
