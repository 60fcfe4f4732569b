//! Synthetic scenarios: smooth body trajectories, IMU streams that invert the
//! filter's discrete mechanization exactly, and landmark projections written
//! as track-file frames.
//!
//! Samples sit at `t_k = k / imu_rate`. The measurement at `t_k` drives the
//! step from `t_{k−1}` to `t_k`, so integrating a noiseless stream with the
//! true biases reproduces the sampled truth up to rounding.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::imu::ImuSample;
use crate::quaternion::{rotation_matrix, Quaternion};
use crate::tracks::TrackFrame;
use crate::triangulation::Pose;

/// Observations nearer than this along the optical axis are omitted (m).
const MIN_VISIBLE_DEPTH: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Stationary,
    /// Constant velocity once the ramp is over.
    Line {
        velocity: Vector3<f64>,
    },
    /// Horizontal circle through the origin, heading along the tangent.
    Circle {
        radius: f64,
        speed: f64,
    },
    /// `x = a_x·sin 2φ`, `y = a_y·sin φ`, `z = a_z·sin 3φ` with `φ = 2π·τ/period`;
    /// yaw swings by `yaw_amplitude·sin φ` and roll/pitch wobble slightly.
    FigureEight {
        amp_x: f64,
        amp_y: f64,
        amp_z: f64,
        period: f64,
        yaw_amplitude: f64,
    },
    /// Closed Catmull–Rom loop through the waypoints, one segment per
    /// `segment_duration` seconds.
    PiecewiseSpline {
        waypoints: Vec<Vector3<f64>>,
        segment_duration: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkVolume {
    pub count: usize,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub accel_density: f64,
    /// Gyroscope white-noise density (rad/s/√Hz).
    pub gyro_density: f64,
    /// Pixel noise std dev (px).
    pub pixel_sigma: f64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            accel_density: 0.0,
            gyro_density: 0.0,
            pixel_sigma: 0.0,
        }
    }

    pub fn realistic() -> Self {
        Self {
            accel_density: 0.02,
            gyro_density: 0.002,
            pixel_sigma: 1.0,
        }
    }
}

/// True sensor errors, in the filter's compensation model
/// `ã = T_a·a − b_a`, `ω̃ = ω − b_ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTruth {
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_scale: Vector3<f64>,
}

impl BiasTruth {
    pub fn none() -> Self {
        Self {
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_scale: Vector3::repeat(1.0),
        }
    }
}

/// Bias random walk (per √s) for model-mismatch runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasWalk {
    pub accel: f64,
    pub gyro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub trajectory: TrajectoryKind,
    /// Base roll, pitch, yaw (rad).
    pub attitude: Vector3<f64>,
    /// Time at rest before the motion starts (s).
    pub still_duration: f64,
    /// Length of the smooth speed-up (s).
    pub ramp_duration: f64,
    pub duration: f64,
    pub imu_rate: f64,
    pub frame_rate: f64,
    pub landmarks: LandmarkVolume,
    pub noise: NoiseSpec,
    pub bias: BiasTruth,
    #[serde(default)]
    pub bias_walk: Option<BiasWalk>,
    /// `(t_start, t_end)` windows whose frames carry no observations.
    #[serde(default)]
    pub occlusions: Vec<(f64, f64)>,
    pub camera: CameraModel,
    pub gravity: Vector3<f64>,
    pub seed: u64,
}

/// Forward-looking 480×640 camera with mild distortion: the optical axis is
/// the body x axis, image u along body y and v along body z.
pub fn desk_camera() -> CameraModel {
    let mut cam = CameraModel::pinhole(420.0, 420.0, 240.0, 320.0, 480, 640);
    cam.k1 = -0.05;
    cam.k2 = 0.01;
    cam.p1 = 1e-4;
    cam.p2 = -2e-4;
    let r = nalgebra::Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
    cam.q_ic = Quaternion::from_rotation_matrix(&r);
    cam.p_ic = Vector3::new(0.05, 0.0, 0.0);
    cam
}

impl ScenarioSpec {
    /// Hand-held figure-eight in front of a landmark wall: 60 s, 100 Hz IMU,
    /// 10 fps, realistic noise and small biases.
    pub fn desk(seed: u64) -> Self {
        Self {
            trajectory: TrajectoryKind::FigureEight {
                amp_x: 0.8,
                amp_y: 2.5,
                amp_z: 0.3,
                period: 12.0,
                yaw_amplitude: 0.5,
            },
            attitude: Vector3::new(0.03, -0.02, 0.0),
            still_duration: 1.5,
            ramp_duration: 2.0,
            duration: 60.0,
            imu_rate: 100.0,
            frame_rate: 10.0,
            landmarks: LandmarkVolume {
                count: 120,
                min: Vector3::new(5.0, -9.0, -4.0),
                max: Vector3::new(11.0, 9.0, 4.0),
            },
            noise: NoiseSpec::realistic(),
            bias: BiasTruth {
                accel_bias: Vector3::new(0.03, -0.02, 0.01),
                gyro_bias: Vector3::new(0.002, -0.001, 0.0015),
                accel_scale: Vector3::new(1.002, 0.997, 1.001),
            },
            bias_walk: None,
            occlusions: Vec::new(),
            camera: desk_camera(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            seed,
        }
    }

    /// The desk scenario without sensor noise or sensor errors.
    pub fn desk_noiseless(seed: u64) -> Self {
        Self {
            noise: NoiseSpec::zero(),
            bias: BiasTruth::none(),
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !pos(self.imu_rate) || !pos(self.frame_rate) || !pos(self.duration) {
            return Err(Error::InvalidInput(
                "rates and duration must be positive".into(),
            ));
        }
        let ratio = self.imu_rate / self.frame_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::InvalidInput(format!(
                "imu_rate / frame_rate = {ratio} must be a positive integer"
            )));
        }
        if !nonneg(self.still_duration) || !nonneg(self.ramp_duration) {
            return Err(Error::InvalidInput(
                "still and ramp durations must be non-negative".into(),
            ));
        }
        let n = &self.noise;
        if !nonneg(n.accel_density) || !nonneg(n.gyro_density) || !nonneg(n.pixel_sigma) {
            return Err(Error::InvalidInput(
                "noise levels must be non-negative".into(),
            ));
        }
        if self.bias.accel_scale.iter().any(|s| !pos(*s)) {
            return Err(Error::InvalidInput(
                "accelerometer scale must be positive".into(),
            ));
        }
        for &(a, b) in &self.occlusions {
            if !(a >= 0.0 && a < b && b <= self.duration) {
                return Err(Error::InvalidInput(format!(
                    "occlusion window ({a}, {b}) outside [0, {}]",
                    self.duration
                )));
            }
        }
        if self
            .landmarks
            .min
            .iter()
            .zip(self.landmarks.max.iter())
            .any(|(a, b)| !(a <= b))
        {
            return Err(Error::InvalidInput(
                "landmark volume min exceeds max".into(),
            ));
        }
        match &self.trajectory {
            TrajectoryKind::Circle { radius, speed } if !pos(*radius) || !speed.is_finite() => {
                Err(Error::InvalidInput("circle radius must be positive".into()))
            }
            TrajectoryKind::FigureEight { period, .. } if !pos(*period) => Err(
                Error::InvalidInput("figure-eight period must be positive".into()),
            ),
            TrajectoryKind::PiecewiseSpline {
                waypoints,
                segment_duration,
            } if waypoints.len() < 2 || !pos(*segment_duration) => Err(Error::InvalidInput(
                "spline needs at least 2 waypoints and a positive segment duration".into(),
            )),
            _ => self.camera.validate(),
        }
    }

    /// Motion clock: zero while still, then accelerating through a quintic
    /// smoothstep so velocity and acceleration start from zero.
    fn motion_time(&self, t: f64) -> f64 {
        let s = t - self.still_duration;
        if s <= 0.0 {
            return 0.0;
        }
        let tr = self.ramp_duration;
        if tr == 0.0 {
            return s;
        }
        if s < tr {
            let u = s / tr;
            tr * u.powi(4) * (2.5 - 3.0 * u + u * u)
        } else {
            0.5 * tr + (s - tr)
        }
    }

    /// True body pose at time `t`.
    pub fn pose_at(&self, t: f64) -> (Vector3<f64>, Quaternion) {
        let tau = self.motion_time(t);
        let [roll, pitch, yaw] = [self.attitude.x, self.attitude.y, self.attitude.z];
        let (p, (dr, dp, dy)) = match &self.trajectory {
            TrajectoryKind::Stationary => (Vector3::zeros(), (0.0, 0.0, 0.0)),
            TrajectoryKind::Line { velocity } => (velocity * tau, (0.0, 0.0, 0.0)),
            TrajectoryKind::Circle { radius, speed } => {
                let th = speed / radius * tau;
                (
                    Vector3::new(radius * th.sin(), radius * (1.0 - th.cos()), 0.0),
                    (0.0, 0.0, th),
                )
            }
            TrajectoryKind::FigureEight {
                amp_x,
                amp_y,
                amp_z,
                period,
                yaw_amplitude,
            } => {
                let ph = 2.0 * std::f64::consts::PI * tau / period;
                (
                    Vector3::new(
                        amp_x * (2.0 * ph).sin(),
                        amp_y * ph.sin(),
                        amp_z * (3.0 * ph).sin(),
                    ),
                    (
                        0.06 * (2.0 * ph).sin(),
                        0.05 * (3.0 * ph).sin(),
                        yaw_amplitude * ph.sin(),
                    ),
                )
            }
            TrajectoryKind::PiecewiseSpline {
                waypoints,
                segment_duration,
            } => (
                catmull_rom_loop(waypoints, tau / segment_duration),
                (0.0, 0.0, 0.0),
            ),
        };
        (p, Quaternion::from_euler(roll + dr, pitch + dp, yaw + dy))
    }

    fn sample_count(&self) -> usize {
        (self.duration * self.imu_rate + 1e-9).floor() as usize + 1
    }

    fn frame_stride(&self) -> usize {
        (self.imu_rate / self.frame_rate).round() as usize
    }

    fn occluded(&self, t: f64) -> bool {
        self.occlusions.iter().any(|&(a, b)| t >= a && t < b)
    }
}

fn catmull_rom_loop(w: &[Vector3<f64>], s: f64) -> Vector3<f64> {
    let n = w.len() as i64;
    let i = s.floor() as i64;
    let u = s - s.floor();
    let at = |k: i64| w[k.rem_euclid(n) as usize];
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let u2 = u * u;
    let u3 = u2 * u;
    (p1 * 2.0
        + (p2 - p0) * u
        + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * u2
        + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * u3)
        * 0.5
}

/// Ground-truth state at an IMU sample. `v` is the velocity the discrete
/// mechanization carries after the step ending at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub p: Vector3<f64>,
    pub q: Quaternion,
    pub v: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub imu: Vec<ImuSample>,
    pub frames: Vec<TrackFrame>,
    /// One entry per IMU sample.
    pub truth: Vec<TruthSample>,
    pub landmarks: Vec<Vector3<f64>>,
    /// Landmark index behind every emitted feature id.
    pub feature_landmark: BTreeMap<u64, usize>,
}

impl Synthesis {
    /// Truth at the IMU sample nearest to `t`.
    pub fn truth_at(&self, t: f64) -> &TruthSample {
        let i = self.truth.partition_point(|s| s.t < t);
        match (i.checked_sub(1), self.truth.get(i)) {
            (Some(a), Some(b)) if (t - self.truth[a].t) < (b.t - t) => &self.truth[a],
            (_, Some(b)) => b,
            (Some(a), None) => &self.truth[a],
            (None, None) => unreachable!("truth is never empty"),
        }
    }

    /// Length of the true path (m).
    pub fn path_length(&self) -> f64 {
        self.truth
            .windows(2)
            .map(|w| (w[1].p - w[0].p).norm())
            .sum()
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    if std == 0.0 {
        return Vector3::zeros();
    }
    Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * std)
}

/// IMU stream, track-file frames and ground truth for a scenario.
pub fn synthesize(spec: &ScenarioSpec) -> Result<Synthesis> {
    spec.validate()?;
    let dt = 1.0 / spec.imu_rate;
    let n = spec.sample_count();
    let time = |k: i64| k as f64 * dt;

    // poses at t_{-1} … t_n
    let poses: Vec<(Vector3<f64>, Quaternion)> =
        (-1..=n as i64).map(|k| spec.pose_at(time(k))).collect();
    let pose = |k: i64| &poses[(k + 1) as usize];
    let vel = |k: i64| (pose(k + 1).0 - pose(k).0) / dt;

    let mut imu_rng = rng_stream(spec.seed, 1);
    let mut walk_rng = rng_stream(spec.seed, 2);
    let accel_std = spec.noise.accel_density * spec.imu_rate.sqrt();
    let gyro_std = spec.noise.gyro_density * spec.imu_rate.sqrt();

    let mut ba = spec.bias.accel_bias;
    let mut bw = spec.bias.gyro_bias;
    let mut imu = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for k in 0..n as i64 {
        let t = time(k);
        if k > 0 {
            if let Some(walk) = &spec.bias_walk {
                ba += gaussian3(&mut walk_rng, walk.accel * dt.sqrt());
                bw += gaussian3(&mut walk_rng, walk.gyro * dt.sqrt());
            }
        }
        let (_, q_prev) = pose(k - 1);
        let (p, q) = pose(k);
        let w_true = (q_prev.conjugate() * *q).to_rotation_vector() / dt;
        let r = rotation_matrix(&q.to_vector());
        let a_true = r.transpose() * ((vel(k) - vel(k - 1)) / dt + spec.gravity);

        let a_meas = (a_true + ba + gaussian3(&mut imu_rng, accel_std))
            .component_div(&spec.bias.accel_scale);
        let w_meas = w_true + bw + gaussian3(&mut imu_rng, gyro_std);
        imu.push(ImuSample::new(t, a_meas, w_meas));
        truth.push(TruthSample {
            t,
            p: *p,
            q: q.normalized()?,
            v: vel(k),
            accel_bias: ba,
            gyro_bias: bw,
        });
    }

    let mut lm_rng = rng_stream(spec.seed, 3);
    let vol = &spec.landmarks;
    let landmarks: Vec<Vector3<f64>> = (0..vol.count)
        .map(|_| {
            Vector3::from_fn(|i, _| vol.min[i] + (vol.max[i] - vol.min[i]) * lm_rng.random::<f64>())
        })
        .collect();

    let mut px_rng = rng_stream(spec.seed, 4);
    let cam = &spec.camera;
    let mut frames = Vec::new();
    let mut feature_landmark = BTreeMap::new();
    // id currently carried by each landmark, cleared when it drops out of view
    let mut live_id: Vec<Option<u64>> = vec![None; landmarks.len()];
    let mut next_id = 0u64;
    for k in (0..n).step_by(spec.frame_stride()) {
        let t = truth[k].t;
        let mut obs = Vec::new();
        let mut seen = vec![false; landmarks.len()];
        if !spec.occluded(t) {
            let (p, q) = (truth[k].p, truth[k].q.to_vector());
            for (j, lm) in landmarks.iter().enumerate() {
                let pc = cam.world_to_camera(&p, &q, lm);
                if pc.z < MIN_VISIBLE_DEPTH {
                    continue;
                }
                let Ok(px) = cam.project(&pc) else { continue };
                let noise = if spec.noise.pixel_sigma > 0.0 {
                    Vector2::from_fn(|_, _| {
                        px_rng.sample::<f64, _>(StandardNormal) * spec.noise.pixel_sigma
                    })
                } else {
                    Vector2::zeros()
                };
                let px = px + noise;
                if !cam.in_bounds(px.x, px.y) {
                    continue;
                }
                let id = *live_id[j].get_or_insert_with(|| {
                    next_id += 1;
                    feature_landmark.insert(next_id, j);
                    next_id
                });
                seen[j] = true;
                obs.push((id, px.x, px.y));
            }
        }
        for (j, s) in seen.iter().enumerate() {
            if !s {
                live_id[j] = None;
            }
        }
        obs.sort_by_key(|o| o.0);
        frames.push(TrackFrame { t, obs });
    }

    Ok(Synthesis {
        imu,
        frames,
        truth,
        landmarks,
        feature_landmark,
    })
}

/// A feature seen from a short trail of uncertain camera poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrailScenario {
    /// Nominal body poses, oldest first.
    pub poses: Vec<Pose>,
    /// Joint covariance of the pose errors, 6 per pose: position (m), then
    /// a body-frame rotation vector (rad) applied as `q ⊗ exp(δθ)`.
    pub pose_cov: DMatrix<f64>,
    pub feature: Vector3<f64>,
    pub pixel_sigma: f64,
    pub camera: CameraModel,
    pub n_mc: usize,
    pub seed: u64,
}

impl TrailScenario {
    /// Three poses sliding sideways past a feature 4 m ahead. Each pose
    /// inherits the error of its predecessor plus a fresh increment, so the
    /// errors are strongly correlated and grow towards the newest pose.
    pub fn three_pose(seed: u64) -> Self {
        let cam = desk_camera();
        let poses: Vec<Pose> = (0..3)
            .map(|i| {
                let q = Quaternion::from_euler(0.0, 0.0, -0.08 * i as f64).to_vector();
                (Vector3::new(0.0, 0.25 * i as f64, 0.0), q)
            })
            .collect();
        let inc = DVector::from_vec(vec![0.04, 0.04, 0.02, 0.004, 0.004, 0.012]);
        let mut l = DMatrix::zeros(18, 18);
        for i in 0..3 {
            for j in 0..=i {
                for k in 0..6 {
                    l[(6 * i + k, 6 * j + k)] = inc[k];
                }
            }
        }
        Self {
            poses,
            pose_cov: &l * l.transpose(),
            feature: Vector3::new(4.0, 0.6, 0.3),
            pixel_sigma: 1.0,
            camera: cam,
            n_mc: 100_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = 6 * self.poses.len();
        if self.poses.len() < 2 {
            return Err(Error::InvalidInput("need at least two poses".into()));
        }
        if self.pose_cov.shape() != (d, d) {
            return Err(Error::InvalidInput(format!(
                "pose covariance must be {d}×{d}"
            )));
        }
        if !(self.pixel_sigma >= 0.0) {
            return Err(Error::InvalidInput(
                "pixel sigma must be non-negative".into(),
            ));
        }
        self.camera.validate()
    }

    /// Noise-free pixel projections of the feature.
    pub fn nominal_pixels(&self) -> Result<Vec<Vector2<f64>>> {
        self.poses
            .iter()
            .map(|(p, q)| {
                self.camera
                    .project(&self.camera.world_to_camera(p, q, &self.feature))
            })
            .collect()
    }
}

/// Poses perturbed as `p + δp`, `q ⊗ exp(δθ)`.
pub fn perturb_poses(poses: &[Pose], delta: &DVector<f64>) -> Vec<Pose> {
    poses
        .iter()
        .enumerate()
        .map(|(i, (p, q))| {
            let dp = Vector3::new(delta[6 * i], delta[6 * i + 1], delta[6 * i + 2]);
            let dth = Vector3::new(delta[6 * i + 3], delta[6 * i + 4], delta[6 * i + 5]);
            let qn = (Quaternion::from_vector(q) * Quaternion::from_rotation_vector(&dth))
                .normalized()
                .map(|q| q.to_vector())
                .unwrap_or(*q);
            (p + dp, qn)
        })
        .collect()
}

/// Monte-Carlo draws of the trail scenario.
#[derive(Clone, Debug)]
pub struct TrailSamples {
    /// Pose-error draws, one `6·m` vector per sample.
    pub pose_errors: Vec<DVector<f64>>,
    /// Pixel-noise draws, one `2·m` vector per sample.
    pub pixel_errors: Vec<DVector<f64>>,
}

/// Correlated pose errors from `N(0, pose_cov)` and independent pixel noise.
/// Deterministic under the scenario seed.
pub fn mc_scenario_fig3(scn: &TrailScenario) -> Result<TrailSamples> {
    scn.validate()?;
    let d = scn.pose_cov.nrows();
    let m = scn.poses.len();
    // semidefinite square root so a zero covariance is allowed
    let eig = scn.pose_cov.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 * eig.eigenvalues.amax().max(1.0) {
        return Err(Error::InvalidInput(
            "pose covariance is not positive semidefinite".into(),
        ));
    }
    let sqrt =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let mut pose_rng = rng_stream(scn.seed, 5);
    let mut px_rng = rng_stream(scn.seed, 6);
    let mut pose_errors = Vec::with_capacity(scn.n_mc);
    let mut pixel_errors = Vec::with_capacity(scn.n_mc);
    for _ in 0..scn.n_mc {
        let z = DVector::from_fn(d, |_, _| pose_rng.sample::<f64, _>(StandardNormal));
        pose_errors.push(&sqrt * z);
        pixel_errors.push(DVector::from_fn(2 * m, |_, _| {
            px_rng.sample::<f64, _>(StandardNormal) * scn.pixel_sigma
        }));
    }
    Ok(TrailSamples {
        pose_errors,
        pixel_errors,
    })
}
