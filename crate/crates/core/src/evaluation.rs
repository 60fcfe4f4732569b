//! Trajectory alignment and absolute trajectory error.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quaternion::{rotation_matrix, Quaternion};

/// Nearest-timestamp matching tolerance (s).
pub const MATCH_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StampedPose {
    pub t: f64,
    pub p: Vector3<f64>,
    pub q: Quaternion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    Rigid3d,
    /// Rotation about the world z axis only.
    Rigid2d,
    /// Rigid plus a global scale; for diagnostics.
    Similarity,
}

impl fmt::Display for AlignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignMode::Rigid3d => "rigid3d",
            AlignMode::Rigid2d => "rigid2d",
            AlignMode::Similarity => "similarity",
        })
    }
}

impl FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid3d" => Ok(AlignMode::Rigid3d),
            "rigid2d" => Ok(AlignMode::Rigid2d),
            "similarity" => Ok(AlignMode::Similarity),
            other => Err(Error::Config(format!("unknown alignment mode `{other}`"))),
        }
    }
}

/// `ref ≈ s·R·est + t` over the matched pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    pub mode: AlignMode,
    /// `(est index, ref index)` of every matched pair.
    pub pairs: Vec<(usize, usize)>,
    /// Position error of each pair after alignment (m).
    pub residuals: Vec<f64>,
}

impl AlignmentResult {
    pub fn identity(pairs: Vec<(usize, usize)>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
            mode: AlignMode::Rigid3d,
            residuals: vec![0.0; pairs.len()],
            pairs,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Pairs each estimate with the nearest reference pose within `tol`.
/// `reference` must be sorted by time.
pub fn match_poses(
    est: &[StampedPose],
    reference: &[StampedPose],
    tol: f64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, e) in est.iter().enumerate() {
        let j = reference.partition_point(|r| r.t < e.t);
        let best = [j.checked_sub(1), (j < reference.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (reference[a].t - e.t)
                    .abs()
                    .total_cmp(&(reference[b].t - e.t).abs())
            });
        if let Some(k) = best {
            if (reference[k].t - e.t).abs() <= tol {
                pairs.push((i, k));
            }
        }
    }
    pairs
}

/// Rotation maximizing `Σ rᵢ·R·eᵢ` over centered point pairs, from the
/// dominant eigenvector of Horn's 4×4 matrix.
fn horn_rotation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut s = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        s += a * b.transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let n = Matrix4::new(
        sxx + syy + szz,
        syz - szy,
        szx - sxz,
        sxy - syx,
        syz - szy,
        sxx - syy - szz,
        sxy + syx,
        szx + sxz,
        szx - sxz,
        sxy + syx,
        -sxx + syy - szz,
        syz + szy,
        sxy - syx,
        szx + sxz,
        syz + szy,
        -sxx - syy + szz,
    );
    let eig = n.symmetric_eigen();
    let q = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    rotation_matrix(&q)
}

fn yaw_rotation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Matrix3<f64> {
    let (mut c, mut s) = (0.0, 0.0);
    for (a, b) in src.iter().zip(dst) {
        c += a.x * b.x + a.y * b.y;
        s += a.x * b.y - a.y * b.x;
    }
    let th = s.atan2(c);
    Matrix3::new(
        th.cos(),
        -th.sin(),
        0.0,
        th.sin(),
        th.cos(),
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

/// Least-squares fit of the estimate onto the reference.
pub fn align(
    est: &[StampedPose],
    reference: &[StampedPose],
    mode: AlignMode,
) -> Result<AlignmentResult> {
    let pairs = match_poses(est, reference, MATCH_TOLERANCE);
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} time-matched pose pairs, need 3",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let e: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est[i].p).collect();
    let r: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| reference[j].p).collect();
    let ce = e.iter().sum::<Vector3<f64>>() / n;
    let cr = r.iter().sum::<Vector3<f64>>() / n;
    let ec: Vec<Vector3<f64>> = e.iter().map(|p| p - ce).collect();
    let rc: Vec<Vector3<f64>> = r.iter().map(|p| p - cr).collect();

    let rotation = match mode {
        AlignMode::Rigid2d => yaw_rotation(&ec, &rc),
        AlignMode::Rigid3d | AlignMode::Similarity => horn_rotation(&ec, &rc),
    };
    let scale = if mode == AlignMode::Similarity {
        let num: f64 = ec
            .iter()
            .zip(&rc)
            .map(|(a, b)| b.dot(&(rotation * a)))
            .sum();
        let den: f64 = ec.iter().map(|a| a.norm_squared()).sum();
        if !(den > 0.0) {
            return Err(Error::InsufficientData(
                "estimate has no spatial extent".into(),
            ));
        }
        num / den
    } else {
        1.0
    };
    let translation = cr - rotation * ce * scale;
    let mut out = AlignmentResult {
        rotation,
        translation,
        scale,
        mode,
        residuals: Vec::new(),
        pairs,
    };
    out.residuals = e
        .iter()
        .zip(&r)
        .map(|(a, b)| (out.apply(a) - b).norm())
        .collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteStats {
    pub rmse: f64,
    pub median: f64,
    pub n_matched: usize,
    /// `(t, error)` per matched estimate.
    pub errors: Vec<(f64, f64)>,
}

/// RMSE and median of the aligned position errors over `alignment.pairs`.
pub fn ate(
    est: &[StampedPose],
    reference: &[StampedPose],
    alignment: &AlignmentResult,
) -> AteStats {
    let errors: Vec<(f64, f64)> = alignment
        .pairs
        .iter()
        .map(|&(i, j)| {
            (
                est[i].t,
                (alignment.apply(&est[i].p) - reference[j].p).norm(),
            )
        })
        .collect();
    let n = errors.len();
    if n == 0 {
        return AteStats {
            rmse: 0.0,
            median: 0.0,
            n_matched: 0,
            errors,
        };
    }
    let rmse = (errors.iter().map(|e| e.1 * e.1).sum::<f64>() / n as f64).sqrt();
    let mut sorted: Vec<f64> = errors.iter().map(|e| e.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    AteStats {
        rmse,
        median,
        n_matched: n,
        errors,
    }
}

/// JSON metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub median: f64,
    pub n_matched: usize,
    pub mode: AlignMode,
}

/// Aligns and evaluates in one go.
pub fn evaluate(
    est: &[StampedPose],
    reference: &[StampedPose],
    mode: AlignMode,
) -> Result<(Metrics, AteStats)> {
    let alignment = align(est, reference, mode)?;
    let stats = ate(est, reference, &alignment);
    Ok((
        Metrics {
            rmse: stats.rmse,
            median: stats.median,
            n_matched: stats.n_matched,
            mode,
        },
        stats,
    ))
}
