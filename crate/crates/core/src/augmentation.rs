//! Pose-trail maintenance at camera frames: a linear prediction that shifts
//! the trail and opens an uninformative slot, followed by a linear update
//! that ties the fresh slot to the current pose.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::layout::*;
use crate::state::{condition_number, symmetrize, FilterState, MAX_INNOVATION_CONDITION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Number of poses kept in the trail.
    pub n_a: usize,
    /// Prior std dev of the fresh slot position (m).
    pub sigma_p_prior: f64,
    /// Prior std dev of the fresh slot quaternion components.
    pub sigma_q_prior: f64,
    /// Residual std dev of the imprint constraint.
    pub sigma_star: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            n_a: 10,
            sigma_p_prior: 1e3,
            sigma_q_prior: 1e3,
            sigma_star: 1e-6,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_a < 2 {
            return Err(Error::InvalidInput(format!(
                "n_a = {} must be at least 2",
                self.n_a
            )));
        }
        if !(self.sigma_star > 0.0)
            || !(self.sigma_star < self.sigma_p_prior)
            || !(self.sigma_q_prior > 0.0)
        {
            return Err(Error::InvalidInput(
                "augmentation std devs must satisfy 0 < sigma_star < sigma_p_prior and sigma_q_prior > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Old index feeding each new index under the shift, `None` for the fresh slot.
fn shift_source(trail: usize, i: usize) -> Option<usize> {
    if i < NAV_DIM {
        Some(i)
    } else if i < pose_offset(1) {
        None
    } else if trail > 0 {
        Some(i - POSE_DIM)
    } else {
        None
    }
}

/// Moves slot `i` to `i + 1` (dropping the oldest), zeroes slot 0 and gives
/// it the prior variances. Equivalent to `A·m`, `A·P·Aᵀ + Q*` with a
/// selection matrix `A`, evaluated by indexing.
pub fn shift_trail(state: &mut FilterState, cfg: &AugmentationConfig) -> Result<()> {
    let n = state.dim();
    let trail = state.trail_len();
    if trail == 0 {
        return Err(Error::InvalidInput("state has no pose trail".into()));
    }
    let src: Vec<Option<usize>> = (0..n).map(|i| shift_source(trail, i)).collect();
    let mean = DVector::from_fn(n, |i, _| src[i].map_or(0.0, |j| state.mean[j]));
    let mut cov = DMatrix::from_fn(n, n, |r, c| match (src[r], src[c]) {
        (Some(a), Some(b)) => state.cov[(a, b)],
        _ => 0.0,
    });
    let o = pose_offset(0);
    for i in 0..3 {
        cov[(o + i, o + i)] = cfg.sigma_p_prior.powi(2);
    }
    for i in 3..POSE_DIM {
        cov[(o + i, o + i)] = cfg.sigma_q_prior.powi(2);
    }
    state.mean = mean;
    state.cov = cov;
    Ok(())
}

/// Measurement matrix of the imprint constraint `(p, q) − π⁽¹⁾ = 0`.
pub fn imprint_jacobian(dim: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(POSE_DIM, dim);
    let o = pose_offset(0);
    for i in 0..POSE_DIM {
        h[(i, i)] = 1.0;
        h[(i, o + i)] = -1.0;
    }
    h
}

/// Kalman update with the pseudo-observation `y* = 0` of the imprint
/// constraint and noise `σ*²·I₇`.
pub fn imprint_pose(state: &mut FilterState, cfg: &AugmentationConfig) -> Result<()> {
    if state.trail_len() == 0 {
        return Err(Error::InvalidInput("state has no pose trail".into()));
    }
    let h = imprint_jacobian(state.dim());
    let innovation = -(&h * &state.mean);
    let r = DMatrix::identity(POSE_DIM, POSE_DIM) * cfg.sigma_star.powi(2);
    state.update(&innovation, &h, &r)
}

/// Shift followed by imprint.
pub fn augment(state: &mut FilterState, cfg: &AugmentationConfig) -> Result<()> {
    shift_trail(state, cfg)?;
    imprint_fresh_slot(state, cfg)
}

/// The imprint update specialised to a slot fresh out of `shift_trail`, whose
/// prior `D` is diagonal and uncorrelated with the rest of the state.
///
/// Same posterior as `imprint_pose`. With `B = P_cc + σ*²·I` and
/// `S = B + D`, the slot blocks are written as `B − B·S⁻¹·B` and
/// `P_cj − B·S⁻¹·P_cj` instead of `D − D·S⁻¹·D`, which would lose about
/// `log10(D / P_cc)` digits to cancellation under a wide prior.
fn imprint_fresh_slot(state: &mut FilterState, cfg: &AugmentationConfig) -> Result<()> {
    let n = state.dim();
    let o = pose_offset(0);
    let cov = &state.cov;
    let d = cov.view((o, o), (POSE_DIM, POSE_DIM)).clone_owned();
    let b = cov.view((0, 0), (POSE_DIM, POSE_DIM))
        + DMatrix::identity(POSE_DIM, POSE_DIM) * cfg.sigma_star.powi(2);
    let mut s = &b + &d;
    symmetrize(&mut s);
    let condition = condition_number(&s);
    if !(condition.is_finite() && condition < MAX_INNOVATION_CONDITION) {
        return Err(Error::NumericalFailure { condition });
    }
    let chol = s.cholesky().ok_or(Error::NumericalFailure { condition })?;

    // P·Hᵀ restricted to the current-pose columns; zero on the fresh slot rows
    let pc = cov.columns(0, POSE_DIM).clone_owned();
    let pct = pc.transpose();
    let y = state.mean.rows(0, POSE_DIM) - state.mean.rows(o, POSE_DIM);
    let g_y = chol.solve(&y);
    let g_pct = chol.solve(&pct);

    let mut mean = &state.mean - &pc * &g_y;
    let slot_mean = state.mean.rows(o, POSE_DIM) + &y - &b * &g_y;
    mean.rows_mut(o, POSE_DIM).copy_from(&slot_mean);

    let mut post = cov - &pc * &g_pct;
    let cross = &pct - &b * &g_pct;
    for j in (0..n).filter(|j| !(o..o + POSE_DIM).contains(j)) {
        for i in 0..POSE_DIM {
            post[(o + i, j)] = cross[(i, j)];
            post[(j, o + i)] = cross[(i, j)];
        }
    }
    let slot = &b - &b * chol.solve(&b);
    post.view_mut((o, o), (POSE_DIM, POSE_DIM)).copy_from(&slot);
    symmetrize(&mut post);
    state.mean = mean;
    state.cov = post;
    state.renormalize_quaternions();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_state(trail: usize, seed: u64) -> FilterState {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = state_dim(trail);
        let mut mean = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-0.3..0.3));
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.01;
        for o in std::iter::once(QUAT).chain((0..trail).map(|s| pose_offset(s) + 3)) {
            let mut q = mean.fixed_rows_mut::<4>(o);
            q /= q.norm();
            if q[0] < 0.0 {
                q.neg_mut();
            }
        }
        FilterState::new(mean, cov).unwrap()
    }

    #[test]
    fn shift_is_a_permutation() {
        let cfg = AugmentationConfig::default();
        let before = random_state(3, 1);
        let mut s = before.clone();
        shift_trail(&mut s, &cfg).unwrap();
        for slot in 1..3 {
            assert_eq!(s.pose(slot), before.pose(slot - 1));
        }
        let o = pose_offset(0);
        assert!(s.mean.rows(o, POSE_DIM).iter().all(|v| *v == 0.0));
        assert_eq!(s.cov[(o, o)], 1e6);
        assert_eq!(s.cov[(o + 3, o + 3)], 1e6);
        assert_eq!(s.cov[(o, 0)], 0.0);
        // nav block and surviving cross terms untouched
        assert_eq!(
            s.cov[(POS, pose_offset(1))],
            before.cov[(POS, pose_offset(0))]
        );
        assert_eq!(
            s.cov[(pose_offset(2), pose_offset(1))],
            before.cov[(pose_offset(1), pose_offset(0))]
        );
    }

    #[test]
    fn shift_matches_selection_matrix() {
        let cfg = AugmentationConfig::default();
        let before = random_state(3, 2);
        let n = before.dim();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..NAV_DIM {
            a[(i, i)] = 1.0;
        }
        for s in 1..3 {
            for k in 0..POSE_DIM {
                a[(pose_offset(s) + k, pose_offset(s - 1) + k)] = 1.0;
            }
        }
        let mut q = DMatrix::zeros(n, n);
        for k in 0..POSE_DIM {
            q[(pose_offset(0) + k, pose_offset(0) + k)] = 1e6;
        }
        let mut s = before.clone();
        shift_trail(&mut s, &cfg).unwrap();
        assert!((&s.mean - &a * &before.mean).abs().max() == 0.0);
        assert!(
            (&s.cov - (&a * &before.cov * a.transpose() + q))
                .abs()
                .max()
                == 0.0
        );
    }

    #[test]
    fn imprint_copies_current_pose() {
        let cfg = AugmentationConfig {
            sigma_star: 1e-4,
            ..Default::default()
        };
        let mut s = random_state(3, 3);
        augment(&mut s, &cfg).unwrap();
        let (p, q) = s.pose(0);
        assert!((p - s.position()).norm() < 1e-6);
        assert!((q - s.quaternion_vector()).norm() < 1e-6);
        let o = pose_offset(0);
        let cur = s.cov.view((0, 0), (POSE_DIM, POSE_DIM));
        let slot = s.cov.view((o, o), (POSE_DIM, POSE_DIM));
        assert!((cur - slot).abs().max() < 1e-6);
        // the slot inherits the current pose's correlations with the rest
        let cross_cur = s.cov.view((0, VEL), (POSE_DIM, NAV_DIM - VEL));
        let cross_slot = s.cov.view((o, VEL), (POSE_DIM, NAV_DIM - VEL));
        assert!((cross_cur - cross_slot).abs().max() < 1e-6);
        assert!(s.max_asymmetry() <= 1e-12);
        assert!(s.min_eigenvalue() > -1e-6);
    }

    #[test]
    fn imprint_matches_dense_conditioning() {
        let cfg = AugmentationConfig {
            sigma_p_prior: 10.0,
            sigma_q_prior: 10.0,
            sigma_star: 1e-2,
            ..Default::default()
        };
        let mut s = random_state(2, 4);
        shift_trail(&mut s, &cfg).unwrap();
        let h = imprint_jacobian(s.dim());
        let r = DMatrix::identity(7, 7) * 1e-4;
        let ph = &s.cov * h.transpose();
        let sinv = (&h * &ph + r).try_inverse().unwrap();
        let mean = &s.mean - &ph * &sinv * (&h * &s.mean);
        let cov = &s.cov - &ph * &sinv * ph.transpose();
        // renormalization of the quaternion blocks is tested on its own
        let mut oracle = FilterState::new(mean, cov).unwrap();
        oracle.renormalize_quaternions();
        let (mean, cov) = (oracle.mean, oracle.cov);
        imprint_pose(&mut s, &cfg).unwrap();
        let diff = (&s.mean - &mean).abs();
        assert!(diff.max() < 1e-9, "{} at {}", diff.max(), diff.imax());
        assert!((&s.cov - &cov).abs().max() < 1e-9);
    }

    #[test]
    fn fresh_slot_imprint_matches_generic_update() {
        let cfg = AugmentationConfig {
            sigma_p_prior: 3.0,
            sigma_q_prior: 2.0,
            sigma_star: 1e-3,
            ..Default::default()
        };
        for seed in 0..5 {
            let mut generic = random_state(3, seed);
            shift_trail(&mut generic, &cfg).unwrap();
            let mut fast = generic.clone();
            imprint_pose(&mut generic, &cfg).unwrap();
            imprint_fresh_slot(&mut fast, &cfg).unwrap();
            assert!((&fast.mean - &generic.mean).amax() < 1e-10);
            assert!((&fast.cov - &generic.cov).amax() < 1e-10);
        }
    }

    #[test]
    fn wide_prior_keeps_the_fresh_slot_exact() {
        // under the default 1e3 prior the slot must equal the current pose
        // block to near machine precision
        let cfg = AugmentationConfig::default();
        let mut s = random_state(3, 9);
        augment(&mut s, &cfg).unwrap();
        let o = pose_offset(0);
        let cur = s.cov.view((0, 0), (7, 7)).clone_owned();
        let slot = s.cov.view((o, o), (7, 7)).clone_owned();
        assert!(
            (&slot - &cur).amax() <= 1e-12 * cur.amax().max(1.0) + 2.0 * cfg.sigma_star.powi(2)
        );
    }

    #[test]
    fn rejects_short_trail() {
        let cfg = AugmentationConfig {
            n_a: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AugmentationConfig::default().validate().is_ok());
    }
}
