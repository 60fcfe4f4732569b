//! Sequential inertial-visual odometry.
//!
//! An extended Kalman filter driven by IMU samples, with a trailing window of
//! augmented camera poses whose cross-covariances with the navigation state
//! are kept intact. Feature tracks update the filter through a measurement
//! model in which the triangulated feature position is integrated out: the
//! Gauss–Newton triangulation is differentiated with respect to the state.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augmentation;
pub mod autodiff;
pub mod camera;
pub mod cli;
pub mod comparison;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod imu;
pub mod io;
pub mod quaternion;
pub mod simulator;
pub mod state;
pub mod tracks;
pub mod triangulation;
pub mod visual;

pub use error::{Error, Result};
