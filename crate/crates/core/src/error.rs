use thiserror::Error;

/// Errors raised by the estimator and its supporting I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The innovation covariance (or another matrix that must be inverted) is
    /// singular or too badly conditioned to trust.
    #[error("numerical failure: condition estimate {condition:e}")]
    NumericalFailure { condition: f64 },

    #[error("timestamp error: dt = {dt} s outside (0, {max_dt}]")]
    Timestamp { dt: f64, max_dt: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("point behind camera (depth {depth} m)")]
    BehindCamera { depth: f64 },

    #[error("parallax {angle_deg:.4} deg below threshold {min_deg} deg")]
    LowParallax { angle_deg: f64, min_deg: f64 },

    #[error("degenerate geometry: normal-equation condition {condition:e}")]
    DegenerateGeometry { condition: f64 },

    #[error("triangulation did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("point beyond maximum depth ({depth} m)")]
    TooFar { depth: f64 },

    #[error("undistortion did not converge for pixel ({u}, {v})")]
    DistortionInversion { u: f64, v: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("stream error: {0}")]
    Stream(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short stable name of the variant, for counters and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::Timestamp { .. } => "timestamp",
            Error::InsufficientData(_) => "insufficient_data",
            Error::BehindCamera { .. } => "behind_camera",
            Error::LowParallax { .. } => "low_parallax",
            Error::DegenerateGeometry { .. } => "degenerate_geometry",
            Error::NotConverged { .. } => "not_converged",
            Error::TooFar { .. } => "too_far",
            Error::DistortionInversion { .. } => "distortion_inversion",
            Error::Parse { .. } => "parse",
            Error::Stream(_) => "stream",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
