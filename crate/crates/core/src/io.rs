//! Readers and writers for EuRoC IMU logs, track files, calibration files
//! and TUM trajectories.
//!
//! Calibration is a flat TOML table. Required keys: `fx`, `fy`, `cx`, `cy`,
//! `width`, `height`. Optional keys with their defaults:
//!
//! | key | default | unit |
//! |-----|---------|------|
//! | `k1`, `k2`, `k3`, `p1`, `p2` | 0 | |
//! | `q_ic_w`, `q_ic_x`, `q_ic_y`, `q_ic_z` | 1, 0, 0, 0 | body→camera rotation |
//! | `p_ic_x`, `p_ic_y`, `p_ic_z` | 0 | m, camera center in body |
//! | `sigma_a` | 2.0 | m/s², `cov = σ²·Δt` per sample |
//! | `sigma_w` | 0.2 | rad/s, `cov = σ²·Δt` per sample |
//! | `gravity` | 9.81 | m/s² |
//! | `accel_bias_walk`, `gyro_bias_walk` | 0 | per √s |
//! | `n_a` | 10 | poses |
//! | `sigma_p_prior`, `sigma_q_prior` | 1000 | |
//! | `sigma_star` | 1e-6 | |
//! | `sigma_uv` | 1.0 | px |
//! | `m_min` | 3 | |
//! | `gate_confidence` | 0.95 | |

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationConfig;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::evaluation::StampedPose;
use crate::imu::{ImuSample, ProcessNoiseConfig};
use crate::quaternion::Quaternion;
use crate::tracks::TrackFrame;
use crate::visual::VisualUpdateConfig;

/// Out-of-order IMU rows closer than this to their predecessor are sorted
/// back into place; larger jumps backwards are a stream error (ns).
pub const REORDER_TOLERANCE_NS: u64 = 1_000_000;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finite(v: f64, line: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("non-finite {what}"),
        })
    }
}

/// Nanoseconds to seconds without going through a single large product.
pub fn ns_to_seconds(ns: u64) -> f64 {
    (ns / 1_000_000_000) as f64 + (ns % 1_000_000_000) as f64 / 1e9
}

pub fn seconds_to_ns(t: f64) -> u64 {
    let whole = t.floor();
    whole as u64 * 1_000_000_000 + ((t - whole) * 1e9).round() as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuLog {
    pub samples: Vec<ImuSample>,
    pub duplicates_dropped: usize,
}

/// EuRoC `imu0/data.csv`: a header, then
/// `timestamp [ns], w_x, w_y, w_z [rad/s], a_x, a_y, a_z [m/s²]`.
pub fn parse_euroc_imu(reader: impl Read) -> Result<ImuLog> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(None)
        .from_reader(reader);
    let mut rows: Vec<(u64, ImuSample)> = Vec::new();
    let mut latest = 0u64;
    for record in csv.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 7 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 7 fields, found {}", record.len()),
            });
        }
        let ns: u64 = record[0].parse().map_err(|e| Error::Parse {
            line,
            msg: format!("timestamp `{}`: {e}", &record[0]),
        })?;
        let mut v = [0.0; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            let raw = &record[k + 1];
            let x: f64 = raw.parse().map_err(|e| Error::Parse {
                line,
                msg: format!("field {} `{raw}`: {e}", k + 2),
            })?;
            *slot = finite(x, line, "IMU value")?;
        }
        if ns + REORDER_TOLERANCE_NS < latest {
            return Err(Error::Stream(format!(
                "line {line}: timestamp {ns} ns precedes {latest} ns beyond the reordering tolerance"
            )));
        }
        latest = latest.max(ns);
        let sample = ImuSample::new(
            ns_to_seconds(ns),
            Vector3::new(v[3], v[4], v[5]),
            Vector3::new(v[0], v[1], v[2]),
        );
        rows.push((ns, sample));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no IMU rows".into(),
        });
    }
    rows.sort_by_key(|r| r.0);
    let before = rows.len();
    rows.dedup_by_key(|r| r.0);
    let duplicates_dropped = before - rows.len();
    if duplicates_dropped > 0 {
        warn!("dropped {duplicates_dropped} IMU rows with duplicate timestamps");
    }
    Ok(ImuLog {
        samples: rows.into_iter().map(|r| r.1).collect(),
        duplicates_dropped,
    })
}

pub fn load_euroc_imu(path: impl AsRef<Path>) -> Result<ImuLog> {
    parse_euroc_imu(open(path.as_ref())?)
}

pub fn write_euroc_imu(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = String::from("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n");
    for s in samples {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            seconds_to_ns(s.t),
            s.gyro.x,
            s.gyro.y,
            s.gyro.z,
            s.accel.x,
            s.accel.y,
            s.accel.z
        ));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Track file: one JSON object `{"t": …, "obs": [[id, u, v], …]}` per line.
pub fn parse_tracks(reader: impl BufRead) -> Result<Vec<TrackFrame>> {
    let mut frames = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: TrackFrame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        finite(frame.t, line_no, "frame time")?;
        for o in &frame.obs {
            finite(o.1, line_no, "pixel coordinate")?;
            finite(o.2, line_no, "pixel coordinate")?;
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn read_tracks(path: impl AsRef<Path>) -> Result<Vec<TrackFrame>> {
    parse_tracks(BufReader::new(open(path.as_ref())?))
}

pub fn write_tracks(path: impl AsRef<Path>, frames: &[TrackFrame]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = String::new();
    for f in frames {
        body.push_str(&serde_json::to_string(f).map_err(|e| Error::InvalidInput(e.to_string()))?);
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub camera: CameraModel,
    pub noise: ProcessNoiseConfig,
    pub augmentation: AugmentationConfig,
    pub visual: VisualUpdateConfig,
}

const CALIBRATION_KEYS: &[&str] = &[
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "k1",
    "k2",
    "k3",
    "p1",
    "p2",
    "q_ic_w",
    "q_ic_x",
    "q_ic_y",
    "q_ic_z",
    "p_ic_x",
    "p_ic_y",
    "p_ic_z",
    "sigma_a",
    "sigma_w",
    "gravity",
    "accel_bias_walk",
    "gyro_bias_walk",
    "n_a",
    "sigma_p_prior",
    "sigma_q_prior",
    "sigma_star",
    "sigma_uv",
    "m_min",
    "gate_confidence",
];

struct Keys<'a>(&'a toml::Table);

impl Keys<'_> {
    fn number(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) if v.is_finite() => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(other) => Err(Error::Config(format!(
                "key `{key}` must be a finite number, got {other}"
            ))),
        }
    }

    fn required(&self, key: &str) -> Result<f64> {
        self.number(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.number(key)?.unwrap_or(default))
    }

    fn count(&self, key: &str, value: f64) -> Result<usize> {
        if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
            Ok(value as usize)
        } else {
            Err(Error::Config(format!(
                "key `{key}` must be a non-negative integer"
            )))
        }
    }
}

pub fn parse_calibration(text: &str) -> Result<CalibrationConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start].lines().count().max(1));
        Error::Parse {
            line,
            msg: e.message().to_string(),
        }
    })?;
    let known: BTreeSet<&str> = CALIBRATION_KEYS.iter().copied().collect();
    if let Some(unknown) = table.keys().find(|k| !known.contains(k.as_str())) {
        return Err(Error::Config(format!("unknown key `{unknown}`")));
    }
    let k = Keys(&table);
    let width = k.required("width")?;
    let height = k.required("height")?;
    let mut camera = CameraModel::pinhole(
        k.required("fx")?,
        k.required("fy")?,
        k.required("cx")?,
        k.required("cy")?,
        k.count("width", width)? as u32,
        k.count("height", height)? as u32,
    );
    camera.k1 = k.or("k1", 0.0)?;
    camera.k2 = k.or("k2", 0.0)?;
    camera.k3 = k.or("k3", 0.0)?;
    camera.p1 = k.or("p1", 0.0)?;
    camera.p2 = k.or("p2", 0.0)?;
    camera.q_ic = Quaternion::new(
        k.or("q_ic_w", 1.0)?,
        k.or("q_ic_x", 0.0)?,
        k.or("q_ic_y", 0.0)?,
        k.or("q_ic_z", 0.0)?,
    );
    camera.p_ic = Vector3::new(
        k.or("p_ic_x", 0.0)?,
        k.or("p_ic_y", 0.0)?,
        k.or("p_ic_z", 0.0)?,
    );
    camera
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;

    let d = ProcessNoiseConfig::default();
    let noise = ProcessNoiseConfig {
        sigma_a: Vector3::repeat(k.or("sigma_a", d.sigma_a.x)?),
        sigma_w: Vector3::repeat(k.or("sigma_w", d.sigma_w.x)?),
        gravity: Vector3::new(0.0, 0.0, -k.or("gravity", -d.gravity.z)?),
        accel_bias_walk: k.or("accel_bias_walk", 0.0)?,
        gyro_bias_walk: k.or("gyro_bias_walk", 0.0)?,
    };
    noise.validate().map_err(|e| Error::Config(e.to_string()))?;

    let d = AugmentationConfig::default();
    let n_a = k.or("n_a", d.n_a as f64)?;
    let augmentation = AugmentationConfig {
        n_a: k.count("n_a", n_a)?,
        sigma_p_prior: k.or("sigma_p_prior", d.sigma_p_prior)?,
        sigma_q_prior: k.or("sigma_q_prior", d.sigma_q_prior)?,
        sigma_star: k.or("sigma_star", d.sigma_star)?,
    };
    augmentation
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;

    let d = VisualUpdateConfig::default();
    let m_min = k.or("m_min", d.m_min as f64)?;
    let visual = VisualUpdateConfig {
        sigma_uv: k.or("sigma_uv", d.sigma_uv)?,
        m_min: k.count("m_min", m_min)?,
        gate_confidence: k.or("gate_confidence", d.gate_confidence)?,
        triangulation: d.triangulation,
    };
    visual
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;

    Ok(CalibrationConfig {
        camera,
        noise,
        augmentation,
        visual,
    })
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<CalibrationConfig> {
    let path = path.as_ref();
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    parse_calibration(&text)
}

/// Flat TOML text accepted by [`parse_calibration`]. Per-axis noise values
/// are written from the x component.
pub fn calibration_to_string(c: &CalibrationConfig) -> String {
    let cam = &c.camera;
    let entries: Vec<(&str, String)> = vec![
        ("fx", format!("{:?}", cam.fx)),
        ("fy", format!("{:?}", cam.fy)),
        ("cx", format!("{:?}", cam.cx)),
        ("cy", format!("{:?}", cam.cy)),
        ("width", cam.width.to_string()),
        ("height", cam.height.to_string()),
        ("k1", format!("{:?}", cam.k1)),
        ("k2", format!("{:?}", cam.k2)),
        ("k3", format!("{:?}", cam.k3)),
        ("p1", format!("{:?}", cam.p1)),
        ("p2", format!("{:?}", cam.p2)),
        ("q_ic_w", format!("{:?}", cam.q_ic.w)),
        ("q_ic_x", format!("{:?}", cam.q_ic.x)),
        ("q_ic_y", format!("{:?}", cam.q_ic.y)),
        ("q_ic_z", format!("{:?}", cam.q_ic.z)),
        ("p_ic_x", format!("{:?}", cam.p_ic.x)),
        ("p_ic_y", format!("{:?}", cam.p_ic.y)),
        ("p_ic_z", format!("{:?}", cam.p_ic.z)),
        ("sigma_a", format!("{:?}", c.noise.sigma_a.x)),
        ("sigma_w", format!("{:?}", c.noise.sigma_w.x)),
        ("gravity", format!("{:?}", -c.noise.gravity.z)),
        ("accel_bias_walk", format!("{:?}", c.noise.accel_bias_walk)),
        ("gyro_bias_walk", format!("{:?}", c.noise.gyro_bias_walk)),
        ("n_a", c.augmentation.n_a.to_string()),
        (
            "sigma_p_prior",
            format!("{:?}", c.augmentation.sigma_p_prior),
        ),
        (
            "sigma_q_prior",
            format!("{:?}", c.augmentation.sigma_q_prior),
        ),
        ("sigma_star", format!("{:?}", c.augmentation.sigma_star)),
        ("sigma_uv", format!("{:?}", c.visual.sigma_uv)),
        ("m_min", c.visual.m_min.to_string()),
        ("gate_confidence", format!("{:?}", c.visual.gate_confidence)),
    ];
    entries
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn write_calibration(path: impl AsRef<Path>, c: &CalibrationConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, calibration_to_string(c)).map_err(|e| Error::io(path, e))
}

fn clean(v: f64) -> f64 {
    // avoid printing "-0"
    v + 0.0
}

/// One TUM line: `t tx ty tz qx qy qz qw` (scalar last). Time has nine
/// decimals; the other fields use the shortest exact representation, in
/// exponent form for very small or large magnitudes.
pub fn tum_line(p: &StampedPose) -> String {
    let q = p.q;
    format!(
        "{:.9} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
        p.t,
        clean(p.p.x),
        clean(p.p.y),
        clean(p.p.z),
        clean(q.x),
        clean(q.y),
        clean(q.z),
        clean(q.w)
    )
}

pub fn write_trajectory(path: impl AsRef<Path>, poses: &[StampedPose]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let body: String = poses.iter().map(|p| tum_line(p) + "\n").collect();
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// TUM trajectory; blank lines and `#` comments are skipped. The result is
/// sorted by time.
pub fn parse_trajectory(reader: impl BufRead) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if v.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 8 fields, found {}", v.len()),
            });
        }
        for x in &v {
            finite(*x, line_no, "trajectory value")?;
        }
        out.push(StampedPose {
            t: v[0],
            p: Vector3::new(v[1], v[2], v[3]),
            q: Quaternion::new(v[7], v[4], v[5], v[6]),
        });
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(out)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<StampedPose>> {
    parse_trajectory(BufReader::new(open(path.as_ref())?))
}

/// `t,error` rows of per-pose position errors.
pub fn write_pose_errors(path: impl AsRef<Path>, errors: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let map = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(map)?;
    w.write_record(["t", "error"]).map_err(map)?;
    for (t, e) in errors {
        w.write_record([format!("{t:.9}"), e.to_string()])
            .map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pretty JSON of any serializable report.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
