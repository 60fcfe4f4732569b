//! Sequential estimation loop.
//!
//! IMU samples are propagated as they arrive. At a camera frame the filter
//! is first brought to the frame time, the pose trail is augmented, the
//! frame's observations extend the feature tracks, and every ready track is
//! proposed as an update in ascending id order.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use log::{debug, info};
use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment, AugmentationConfig};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::evaluation::StampedPose;
use crate::imu::{
    detect_stationary, initial_state, propagate, speed_prior_update, zupt_update, ImuSample,
    InitConfig, ProcessNoiseConfig, StationaryConfig,
};
use crate::io::CalibrationConfig;
use crate::state::layout::VEL;
use crate::state::FilterState;
use crate::tracks::{TrackFrame, TrackManager};
use crate::visual::{apply_update, build_proposal, gate, VisualUpdateConfig};

/// Frame and sample times closer than this are treated as simultaneous (s).
const TIME_EPS: f64 = 1e-9;

/// Longest accepted distance between a frame and the sample it snaps to (s).
const MAX_SNAP: f64 = 0.1;

/// Zero-velocity updates. Off by default: the norm-based stationarity test
/// cannot tell rest from slow, smoothly accelerating motion, and a false
/// detection leaves a position offset that vision cannot observe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZuptConfig {
    pub enabled: bool,
    /// Variance of the zero-velocity pseudo-measurement ((m/s)²).
    pub r_zupt: f64,
    /// Minimum time between two zero-velocity updates (s).
    pub min_interval: f64,
    /// Chi-square confidence of the innovation gate; detections whose
    /// velocity estimate is confidently nonzero are discarded.
    pub gate_confidence: f64,
    pub stationary: StationaryConfig,
}

impl Default for ZuptConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            r_zupt: 1e-4,
            min_interval: 0.1,
            gate_confidence: 0.99,
            stationary: StationaryConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedPriorConfig {
    pub max_speed: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimatorConfig {
    pub noise: ProcessNoiseConfig,
    pub init: InitConfig,
    pub augmentation: AugmentationConfig,
    pub visual: VisualUpdateConfig,
    pub zupt: ZuptConfig,
    /// Off unless set.
    pub speed_prior: Option<SpeedPriorConfig>,
}

impl EstimatorConfig {
    pub fn from_calibration(c: &CalibrationConfig) -> Self {
        Self {
            noise: c.noise.clone(),
            augmentation: c.augmentation.clone(),
            visual: c.visual.clone(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.augmentation.validate()?;
        self.visual.validate()?;
        if self.visual.m_min > self.augmentation.n_a {
            return Err(Error::InvalidInput(format!(
                "m_min = {} exceeds n_a = {}",
                self.visual.m_min, self.augmentation.n_a
            )));
        }
        let zc = &self.zupt;
        if !(zc.r_zupt > 0.0)
            || !(zc.min_interval >= 0.0)
            || !(zc.gate_confidence > 0.0 && zc.gate_confidence < 1.0)
        {
            return Err(Error::InvalidInput(
                "ZUPT needs r_zupt > 0, min_interval >= 0 and a gate confidence in (0, 1)".into(),
            ));
        }
        if let Some(sp) = &self.speed_prior {
            if !(sp.max_speed > 0.0 && sp.sigma > 0.0) {
                return Err(Error::InvalidInput(
                    "speed prior parameters must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Accumulated wall-clock time of one processing stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub total_s: f64,
    pub calls: usize,
    pub mean_ms: f64,
}

impl StageTiming {
    fn add(&mut self, start: Instant) {
        self.total_s += start.elapsed().as_secs_f64();
        self.calls += 1;
        self.mean_ms = 1e3 * self.total_s / self.calls as f64;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub propagate: StageTiming,
    pub augment: StageTiming,
    pub proposal: StageTiming,
    pub update: StageTiming,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub imu_samples: usize,
    pub imu_skipped: usize,
    pub frames: usize,
    pub frames_skipped: usize,
    /// Ready tracks handed to the update.
    pub tracks_ready: usize,
    pub tracks_accepted: usize,
    pub tracks_gated: usize,
    /// Tracks dropped before gating, by reason.
    pub tracks_failed: BTreeMap<String, usize>,
    /// Gated over gated plus accepted.
    pub gate_rejection_rate: f64,
    pub zupt_count: usize,
    /// Stationary detections rejected by the ZUPT gate.
    pub zupt_gated: usize,
    pub speed_prior_count: usize,
    pub observations_out_of_bounds: usize,
    pub observations_duplicate: usize,
    pub timing: Timing,
}

/// Pose at every frame event with its 7×7 `(p, q)` covariance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub poses: Vec<StampedPose>,
    pub covariances: Vec<SMatrix<f64, 7, 7>>,
}

/// Outcome of one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameReport {
    pub accepted: Vec<u64>,
    pub gated: Vec<u64>,
    pub failed: Vec<(u64, &'static str)>,
}

pub struct Estimator {
    cfg: EstimatorConfig,
    camera: CameraModel,
    state: FilterState,
    tracks: TrackManager,
    last_t: f64,
    window: VecDeque<ImuSample>,
    last_zupt: Option<f64>,
    trajectory: TrajectoryEstimate,
    stats: RunStats,
}

impl Estimator {
    /// Initializes from the leading samples of the stream; the filter time is
    /// that of the first sample.
    pub fn new(cfg: EstimatorConfig, camera: CameraModel, imu: &[ImuSample]) -> Result<Self> {
        cfg.validate()?;
        camera.validate()?;
        let state = initial_state(
            imu,
            &cfg.noise.gravity,
            &cfg.init,
            cfg.augmentation.n_a,
            (
                cfg.augmentation.sigma_p_prior,
                cfg.augmentation.sigma_q_prior,
            ),
        )?;
        let tracks = TrackManager::new(
            cfg.augmentation.n_a,
            cfg.visual.m_min,
            camera.width,
            camera.height,
        )?;
        let first = imu[0];
        Ok(Self {
            cfg,
            camera,
            state,
            tracks,
            last_t: first.t,
            window: VecDeque::from([first]),
            last_zupt: None,
            trajectory: TrajectoryEstimate::default(),
            stats: RunStats {
                imu_samples: 1,
                ..RunStats::default()
            },
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.last_t
    }

    pub fn trajectory(&self) -> &TrajectoryEstimate {
        &self.trajectory
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn into_parts(self) -> (FilterState, TrajectoryEstimate, RunStats) {
        (self.state, self.trajectory, self.stats)
    }

    /// Propagates with one sample, which drives the interval ending at its
    /// time, then applies the inertial pseudo-measurements.
    pub fn process_imu(&mut self, sample: &ImuSample) -> Result<()> {
        if sample.t <= self.last_t + TIME_EPS {
            self.stats.imu_skipped += 1;
            return Ok(());
        }
        let start = Instant::now();
        propagate(
            &mut self.state,
            sample,
            sample.t - self.last_t,
            &self.cfg.noise,
        )?;
        self.stats.timing.propagate.add(start);
        self.last_t = sample.t;
        self.stats.imu_samples += 1;

        let zc = &self.cfg.zupt;
        self.window.push_back(*sample);
        while self.window.len() > 2
            && sample.t - self.window[1].t >= zc.stationary.window - TIME_EPS
        {
            self.window.pop_front();
        }
        let due = self
            .last_zupt
            .is_none_or(|t| sample.t - t >= zc.min_interval - TIME_EPS);
        let span = sample.t - self.window[0].t;
        if zc.enabled && due && span >= zc.stationary.window - TIME_EPS {
            let window: Vec<ImuSample> = self.window.iter().copied().collect();
            if detect_stationary(&window, &zc.stationary)? {
                if zupt_consistent(&self.state, zc.r_zupt, zc.gate_confidence) {
                    zupt_update(&mut self.state, zc.r_zupt)?;
                    self.stats.zupt_count += 1;
                } else {
                    self.stats.zupt_gated += 1;
                }
                self.last_zupt = Some(sample.t);
            }
        }
        if let Some(sp) = &self.cfg.speed_prior {
            if speed_prior_update(&mut self.state, sp.max_speed, sp.sigma)? {
                self.stats.speed_prior_count += 1;
            }
        }
        Ok(())
    }

    /// Augments the trail, ingests the observations and runs the updates of
    /// every ready track. The frame is assigned to the current filter time,
    /// i.e. the most recent IMU sample at or before it.
    pub fn process_frame(&mut self, frame: &TrackFrame) -> Result<FrameReport> {
        if frame.t < self.last_t - TIME_EPS {
            return Err(Error::Stream(format!(
                "frame at {} s precedes the filter time {} s",
                frame.t, self.last_t
            )));
        }
        if frame.t - self.last_t > MAX_SNAP {
            return Err(Error::Stream(format!(
                "frame at {} s is {:.3} s past the last IMU sample",
                frame.t,
                frame.t - self.last_t
            )));
        }

        let start = Instant::now();
        augment(&mut self.state, &self.cfg.augmentation)?;
        self.stats.timing.augment.add(start);

        self.tracks.ingest_frame(&frame.obs, frame.t)?;
        self.stats.frames += 1;
        self.stats.observations_out_of_bounds = self.tracks.dropped_out_of_bounds();
        self.stats.observations_duplicate = self.tracks.dropped_duplicates();
        let current = self.tracks.current_frame().expect("frame ingested");

        let mut report = FrameReport::default();
        for track in self.tracks.ready_tracks() {
            self.stats.tracks_ready += 1;
            let start = Instant::now();
            let proposal =
                build_proposal(&track, current, &self.state, &self.camera, &self.cfg.visual);
            self.stats.timing.proposal.add(start);
            let proposal = match proposal {
                Ok(p) => p,
                Err(e) => {
                    *self
                        .stats
                        .tracks_failed
                        .entry(e.kind().to_string())
                        .or_default() += 1;
                    report.failed.push((track.feature_id, e.kind()));
                    continue;
                }
            };
            if !proposal.accepted {
                self.stats.tracks_gated += 1;
                report.gated.push(track.feature_id);
                continue;
            }
            let start = Instant::now();
            match apply_update(&mut self.state, &proposal) {
                Ok(()) => {
                    self.stats.tracks_accepted += 1;
                    report.accepted.push(track.feature_id);
                }
                Err(e) => {
                    *self
                        .stats
                        .tracks_failed
                        .entry(e.kind().to_string())
                        .or_default() += 1;
                    report.failed.push((track.feature_id, e.kind()));
                }
            }
            self.stats.timing.update.add(start);
        }
        let decided = self.stats.tracks_gated + self.stats.tracks_accepted;
        self.stats.gate_rejection_rate = if decided > 0 {
            self.stats.tracks_gated as f64 / decided as f64
        } else {
            0.0
        };

        let q = self.state.quaternion().normalized()?;
        self.trajectory.poses.push(StampedPose {
            t: self.last_t,
            p: self.state.position(),
            q,
        });
        self.trajectory
            .covariances
            .push(self.state.pose_covariance());
        debug!(
            "frame {current} t = {:.3}: {} accepted, {} gated, {} failed",
            frame.t,
            report.accepted.len(),
            report.gated.len(),
            report.failed.len()
        );
        Ok(report)
    }

    /// Consumes both streams in time order. Frames before the filter start
    /// or beyond the end of the IMU stream are skipped.
    pub fn run(&mut self, imu: &[ImuSample], frames: &[TrackFrame]) -> Result<()> {
        let mut i = imu.partition_point(|s| s.t <= self.last_t + TIME_EPS);
        let end = imu.last().map_or(self.last_t, |s| s.t);
        for frame in frames {
            let early = frame.t < self.last_t - TIME_EPS && self.stats.frames == 0;
            if early || frame.t > end + TIME_EPS {
                self.stats.frames_skipped += 1;
                continue;
            }
            while i < imu.len() && imu[i].t <= frame.t + TIME_EPS {
                self.process_imu(&imu[i])?;
                i += 1;
            }
            self.process_frame(frame)?;
        }
        for s in &imu[i..] {
            self.process_imu(s)?;
        }
        info!(
            "processed {} samples and {} frames: {} tracks accepted, {} gated, {} ZUPTs",
            self.stats.imu_samples,
            self.stats.frames,
            self.stats.tracks_accepted,
            self.stats.tracks_gated,
            self.stats.zupt_count
        );
        Ok(())
    }
}

/// Whether `v = 0` is plausible under the current velocity marginal.
fn zupt_consistent(state: &FilterState, r_zupt: f64, confidence: f64) -> bool {
    let v = state.velocity();
    let s = state.cov.fixed_view::<3, 3>(VEL, VEL) + Matrix3::identity() * r_zupt;
    match s.cholesky() {
        Some(c) => gate(v.dot(&c.solve(&v)), 3, confidence),
        None => false,
    }
}

/// Initializes and runs over complete streams.
pub fn run_offline(
    cfg: &EstimatorConfig,
    camera: &CameraModel,
    imu: &[ImuSample],
    frames: &[TrackFrame],
) -> Result<(TrajectoryEstimate, RunStats, FilterState)> {
    let mut est = Estimator::new(cfg.clone(), camera.clone(), imu)?;
    est.run(imu, frames)?;
    let (state, traj, stats) = est.into_parts();
    Ok((traj, stats, state))
}
