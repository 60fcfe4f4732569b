//! Discrete-time strapdown mechanization, bias/scale compensation and
//! stationarity pseudo-measurements.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quaternion::{
    self, omega_jacobian, omega_matrix, rotate_jacobian, rotation_matrix, Quaternion,
};
use crate::state::layout::*;
use crate::state::FilterState;

/// Longest accepted gap between consecutive IMU samples.
pub const MAX_DT: f64 = 0.1;

pub type NavVector = SVector<f64, NAV_DIM>;
pub type NavMatrix = SMatrix<f64, NAV_DIM, NAV_DIM>;
pub type NoiseJacobian = SMatrix<f64, NAV_DIM, 6>;

/// One IMU reading: time (s), specific force (m/s², body), rate (rad/s, body).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { t, accel, gyro }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.accel.iter().all(|v| v.is_finite())
            && self.gyro.iter().all(|v| v.is_finite())
    }
}

/// IMU noise model: `cov(ε_a) = diag(sigma_a²)·Δt`, `cov(ε_ω) = diag(sigma_w²)·Δt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseConfig {
    pub sigma_a: Vector3<f64>,
    pub sigma_w: Vector3<f64>,
    /// Gravity as it enters `v̇ = R(q)·ã − g`, world frame.
    pub gravity: Vector3<f64>,
    /// Optional bias random-walk std devs per √s (0 keeps biases constant).
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_a: Vector3::repeat(2.0),
            sigma_w: Vector3::repeat(0.2),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
        }
    }
}

impl ProcessNoiseConfig {
    /// Maps white-noise densities (per √Hz) sampled every `dt` onto the
    /// `Σ·Δt` parametrization: a sample carries variance `density²/dt`.
    pub fn from_noise_densities(accel_density: f64, gyro_density: f64, dt: f64) -> Self {
        Self {
            sigma_a: Vector3::repeat(accel_density / dt),
            sigma_w: Vector3::repeat(gyro_density / dt),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .sigma_a
            .iter()
            .chain(self.sigma_w.iter())
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::InvalidInput(
                "noise std devs must be positive".into(),
            ));
        }
        if self.accel_bias_walk < 0.0 || self.gyro_bias_walk < 0.0 {
            return Err(Error::InvalidInput("bias walk must be non-negative".into()));
        }
        Ok(())
    }

    fn process_covariance(&self, dt: f64) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(6, 6);
        for i in 0..3 {
            q[(i, i)] = self.sigma_a[i].powi(2) * dt;
            q[(i + 3, i + 3)] = self.sigma_w[i].powi(2) * dt;
        }
        q
    }
}

/// Bias- and scale-compensated inputs `(ã, ω̃)`.
pub fn compensate(sample: &ImuSample, state: &FilterState) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if !sample.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite IMU sample at t = {}",
            sample.t
        )));
    }
    let scale = state.accel_scale();
    let a = scale.component_mul(&sample.accel) - state.accel_bias();
    let w = sample.gyro - state.gyro_bias();
    Ok((a, w))
}

/// Mean map of the mechanization on the navigation block, without the
/// quaternion renormalization that follows it.
///
/// Order: `q_k = Ω(ω̃·dt)·q_{k−1}`, `v_k = v_{k−1} + (R(q_k)·ã − g)·dt`,
/// `p_k = p_{k−1} + v_{k−1}·dt`.
pub fn transition(
    nav: &NavVector,
    sample: &ImuSample,
    dt: f64,
    gravity: &Vector3<f64>,
) -> NavVector {
    let scale: Vector3<f64> = nav.fixed_rows::<3>(ACC_SCALE).into();
    let ba: Vector3<f64> = nav.fixed_rows::<3>(ACC_BIAS).into();
    let bw: Vector3<f64> = nav.fixed_rows::<3>(GYRO_BIAS).into();
    let a = scale.component_mul(&sample.accel) - ba;
    let w = sample.gyro - bw;
    let p: Vector3<f64> = nav.fixed_rows::<3>(POS).into();
    let q: Vector4<f64> = nav.fixed_rows::<4>(QUAT).into();
    let v: Vector3<f64> = nav.fixed_rows::<3>(VEL).into();

    let phi = w * dt;
    let q_next = omega(&phi) * q;
    let v_next = v + (rotation_matrix(&q_next) * a - gravity) * dt;
    let p_next = p + v * dt;

    let mut out = *nav;
    out.fixed_rows_mut::<3>(POS).copy_from(&p_next);
    out.fixed_rows_mut::<4>(QUAT).copy_from(&q_next);
    out.fixed_rows_mut::<3>(VEL).copy_from(&v_next);
    out
}

// Inputs are checked for finiteness before they reach here.
fn omega(phi: &Vector3<f64>) -> nalgebra::Matrix4<f64> {
    omega_matrix(phi).unwrap_or_else(|_| nalgebra::Matrix4::identity())
}

/// Closed-form `F = ∂f/∂x` and `L = ∂f/∂(ε_a, ε_ω)` of [`transition`].
pub fn transition_jacobians(
    nav: &NavVector,
    sample: &ImuSample,
    dt: f64,
) -> (NavMatrix, NoiseJacobian) {
    let scale: Vector3<f64> = nav.fixed_rows::<3>(ACC_SCALE).into();
    let ba: Vector3<f64> = nav.fixed_rows::<3>(ACC_BIAS).into();
    let bw: Vector3<f64> = nav.fixed_rows::<3>(GYRO_BIAS).into();
    let a = scale.component_mul(&sample.accel) - ba;
    let w = sample.gyro - bw;
    let q: Vector4<f64> = nav.fixed_rows::<4>(QUAT).into();

    let phi = w * dt;
    let omega = omega(&phi);
    let q_next = omega * q;
    let rot = rotation_matrix(&q_next);
    // ∂q_k/∂phi, phi = (ω − b_ω + ε_ω)·dt
    let dq_dphi = omega_jacobian(&phi, &q);
    let dv_dq = rotate_jacobian(&q_next, &a) * dt;

    let mut f = NavMatrix::identity();
    // position row
    f.fixed_view_mut::<3, 3>(POS, VEL)
        .copy_from(&(Matrix3::identity() * dt));
    // quaternion row
    f.fixed_view_mut::<4, 4>(QUAT, QUAT).copy_from(&omega);
    let dq_dbw = -dq_dphi * dt;
    f.fixed_view_mut::<4, 3>(QUAT, GYRO_BIAS).copy_from(&dq_dbw);
    // velocity row
    f.fixed_view_mut::<3, 4>(VEL, QUAT)
        .copy_from(&(dv_dq * omega));
    f.fixed_view_mut::<3, 3>(VEL, ACC_BIAS)
        .copy_from(&(-rot * dt));
    f.fixed_view_mut::<3, 3>(VEL, GYRO_BIAS)
        .copy_from(&(dv_dq * dq_dbw));
    f.fixed_view_mut::<3, 3>(VEL, ACC_SCALE)
        .copy_from(&(rot * Matrix3::from_diagonal(&sample.accel) * dt));

    let mut l = NoiseJacobian::zeros();
    let dq_deps = dq_dphi * dt;
    l.fixed_view_mut::<3, 3>(VEL, 0).copy_from(&(rot * dt));
    l.fixed_view_mut::<4, 3>(QUAT, 3).copy_from(&dq_deps);
    l.fixed_view_mut::<3, 3>(VEL, 3)
        .copy_from(&(dv_dq * dq_deps));
    (f, l)
}

/// EKF prediction with one IMU sample. The augmented poses are untouched.
pub fn propagate(
    state: &mut FilterState,
    sample: &ImuSample,
    dt: f64,
    cfg: &ProcessNoiseConfig,
) -> Result<()> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::Timestamp { dt, max_dt: MAX_DT });
    }
    if !sample.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite IMU sample at t = {}",
            sample.t
        )));
    }
    let nav: NavVector = state.mean.fixed_rows::<NAV_DIM>(0).into();
    let next = transition(&nav, sample, dt, &cfg.gravity);
    let (f, l) = transition_jacobians(&nav, sample, dt);

    let walk = cfg.accel_bias_walk > 0.0 || cfg.gyro_bias_walk > 0.0;
    let (l_full, q_full) = if walk {
        let mut l_full = DMatrix::zeros(NAV_DIM, 12);
        l_full.view_mut((0, 0), (NAV_DIM, 6)).copy_from(&l);
        for i in 0..3 {
            l_full[(ACC_BIAS + i, 6 + i)] = 1.0;
            l_full[(GYRO_BIAS + i, 9 + i)] = 1.0;
        }
        let mut q = DMatrix::zeros(12, 12);
        q.view_mut((0, 0), (6, 6))
            .copy_from(&cfg.process_covariance(dt));
        for i in 0..3 {
            q[(6 + i, 6 + i)] = cfg.accel_bias_walk.powi(2) * dt;
            q[(9 + i, 9 + i)] = cfg.gyro_bias_walk.powi(2) * dt;
        }
        (l_full, q)
    } else {
        (
            DMatrix::from_column_slice(NAV_DIM, 6, l.as_slice()),
            cfg.process_covariance(dt),
        )
    };
    state.predict_nav(&f, &next, &l_full, &q_full)?;
    renormalize_nav_quaternion(state);
    Ok(())
}

fn renormalize_nav_quaternion(state: &mut FilterState) {
    let mut q = state.mean.fixed_rows_mut::<4>(QUAT);
    let n = q.norm();
    if n > 0.0 {
        q /= n;
    }
    if state.mean[QUAT] < 0.0 {
        state.mean.fixed_rows_mut::<4>(QUAT).neg_mut();
        for i in QUAT..QUAT + 4 {
            state.cov.row_mut(i).neg_mut();
            state.cov.column_mut(i).neg_mut();
        }
    }
}

/// Thresholds of the stationarity detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryConfig {
    /// Minimum window span (s).
    pub window: f64,
    /// Std-dev threshold on `|a|` (m/s²).
    pub accel_threshold: f64,
    /// Std-dev threshold on `|ω|` (rad/s).
    pub gyro_threshold: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            window: 0.5,
            accel_threshold: 0.08,
            gyro_threshold: 0.01,
        }
    }
}

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// True iff the sample std-devs of `|a|` and `|ω|` over the window are both
/// below their thresholds.
pub fn detect_stationary(window: &[ImuSample], cfg: &StationaryConfig) -> Result<bool> {
    let span = match (window.first(), window.last()) {
        (Some(a), Some(b)) if window.len() >= 2 => b.t - a.t,
        _ => 0.0,
    };
    if span < cfg.window - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "stationarity window spans {span} s, need {} s",
            cfg.window
        )));
    }
    let sa = sample_std(window.iter().map(|s| s.accel.norm()));
    let sw = sample_std(window.iter().map(|s| s.gyro.norm()));
    Ok(sa < cfg.accel_threshold && sw < cfg.gyro_threshold)
}

/// Zero-velocity pseudo-measurement `v = 0` with noise `r_zupt·I₃`.
pub fn zupt_update(state: &mut FilterState, r_zupt: f64) -> Result<()> {
    let n = state.dim();
    let mut h = DMatrix::zeros(3, n);
    for i in 0..3 {
        h[(i, VEL + i)] = 1.0;
    }
    let innovation = DVector::from_iterator(3, state.velocity().iter().map(|v| -v));
    state.update(&innovation, &h, &(DMatrix::identity(3, 3) * r_zupt))
}

/// Soft speed prior: when `|v|` exceeds `max_speed`, a scalar
/// pseudo-measurement `|v| = max_speed` with std-dev `sigma` is applied.
/// Returns whether an update was made.
pub fn speed_prior_update(state: &mut FilterState, max_speed: f64, sigma: f64) -> Result<bool> {
    let v = state.velocity();
    let speed = v.norm();
    if speed <= max_speed {
        return Ok(false);
    }
    let mut h = DMatrix::zeros(1, state.dim());
    for i in 0..3 {
        h[(0, VEL + i)] = v[i] / speed;
    }
    state.update(
        &DVector::from_element(1, max_speed - speed),
        &h,
        &DMatrix::from_element(1, 1, sigma * sigma),
    )?;
    Ok(true)
}

/// Prior standard deviations of the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub alignment_window: f64,
    pub sigma_p: f64,
    pub sigma_tilt: f64,
    pub sigma_yaw: f64,
    pub sigma_v: f64,
    pub sigma_ba: f64,
    pub sigma_bw: f64,
    pub sigma_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            alignment_window: 1.0,
            sigma_p: 1e-6,
            sigma_tilt: 1e-3,
            sigma_yaw: 1e-6,
            sigma_v: 0.1,
            sigma_ba: 0.1,
            sigma_bw: 0.01,
            sigma_scale: 0.01,
        }
    }
}

/// Roll and pitch (yaw = 0) such that `R(q)·a_mean` points along `gravity`.
pub fn align_to_gravity(mean_accel: &Vector3<f64>, gravity: &Vector3<f64>) -> Result<Quaternion> {
    let gz = gravity[2];
    if gz == 0.0 || gravity.x != 0.0 || gravity.y != 0.0 {
        return Err(Error::InvalidInput(
            "gravity must lie along the world z axis".into(),
        ));
    }
    let na = mean_accel.norm();
    if !(na > 1e-6) {
        return Err(Error::InsufficientData("zero mean acceleration".into()));
    }
    // a = Rᵀg  ⇒  a/g_z = (−sinθ, sinφ·cosθ, cosφ·cosθ)
    let u = mean_accel / (gz.signum() * na);
    let pitch = (-u.x).atan2((u.y * u.y + u.z * u.z).sqrt());
    let roll = u.y.atan2(u.z);
    Quaternion::from_euler(roll, pitch, 0.0).normalized()
}

/// Initial filter state: `p = v = 0`, orientation from the mean accelerometer
/// over the alignment window, zero biases, unit scale, empty trail.
///
/// Trail slots start with zero mean and the augmentation prior variance.
pub fn initial_state(
    samples: &[ImuSample],
    gravity: &Vector3<f64>,
    cfg: &InitConfig,
    trail_len: usize,
    slot_prior: (f64, f64),
) -> Result<FilterState> {
    let t0 = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no IMU samples".into()))?
        .t;
    let window: Vec<&ImuSample> = samples
        .iter()
        .take_while(|s| s.t - t0 <= cfg.alignment_window + 1e-9)
        .collect();
    let mean_accel =
        window.iter().fold(Vector3::zeros(), |acc, s| acc + s.accel) / window.len() as f64;
    let q = align_to_gravity(&mean_accel, gravity)?;

    let n = state_dim(trail_len);
    let mut mean = DVector::zeros(n);
    mean.fixed_rows_mut::<4>(QUAT).copy_from(&q.to_vector());
    mean.fixed_rows_mut::<3>(ACC_SCALE).fill(1.0);

    let mut cov = DMatrix::zeros(n, n);
    for i in 0..3 {
        cov[(POS + i, POS + i)] = cfg.sigma_p.powi(2);
        cov[(VEL + i, VEL + i)] = cfg.sigma_v.powi(2);
        cov[(ACC_BIAS + i, ACC_BIAS + i)] = cfg.sigma_ba.powi(2);
        cov[(GYRO_BIAS + i, GYRO_BIAS + i)] = cfg.sigma_bw.powi(2);
        cov[(ACC_SCALE + i, ACC_SCALE + i)] = cfg.sigma_scale.powi(2);
    }
    // world-frame attitude perturbation q' = exp(δθ) ⊗ q, δq ≈ ½·(0, δθ) ⊗ q
    let g = left_product_jacobian(&q.to_vector()) * 0.5;
    let angles = Matrix3::from_diagonal(&Vector3::new(
        cfg.sigma_tilt.powi(2),
        cfg.sigma_tilt.powi(2),
        cfg.sigma_yaw.powi(2),
    ));
    let q_cov = g * angles * g.transpose();
    cov.view_mut((QUAT, QUAT), (4, 4))
        .copy_from(&((q_cov + q_cov.transpose()) * 0.5));

    let (sp, sq) = slot_prior;
    for s in 0..trail_len {
        let o = pose_offset(s);
        for i in 0..3 {
            cov[(o + i, o + i)] = sp * sp;
        }
        for i in 3..7 {
            cov[(o + i, o + i)] = sq * sq;
        }
    }
    FilterState::new(mean, cov)
}

/// `∂((0, v) ⊗ q)/∂v`.
fn left_product_jacobian(q: &Vector4<f64>) -> SMatrix<f64, 4, 3> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    SMatrix::<f64, 4, 3>::new(-x, -y, -z, w, z, -y, -z, w, x, y, -x, w)
}

/// Heading of a quaternion about the world z axis (ZYX yaw), rad in (−π, π].
pub fn yaw_of(q: &Quaternion) -> f64 {
    let r = quaternion::rotation_matrix(&q.to_vector());
    let y = r[(1, 0)].atan2(r[(0, 0)]);
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}
