//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure (a state dump is written next to the outputs).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::Serialize;

use crate::comparison::compare_update_models;
use crate::error::Error;
use crate::estimator::{Estimator, EstimatorConfig, RunStats};
use crate::evaluation::{evaluate, AlignMode, StampedPose};
use crate::imu::ProcessNoiseConfig;
use crate::io::{
    load_calibration, load_euroc_imu, read_tracks, read_trajectory, write_calibration,
    write_euroc_imu, write_json, write_pose_errors, write_tracks, write_trajectory,
    CalibrationConfig,
};
use crate::simulator::{synthesize, ScenarioSpec, TrailScenario};
use crate::state::FilterState;

#[derive(Debug, Parser)]
#[command(
    name = "pivo",
    version,
    about = "Inertial-visual odometry from IMU logs and feature tracks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a trajectory from an IMU log and a track file.
    Run(RunArgs),
    /// Generate a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Score an estimated trajectory against a reference.
    Evaluate(EvaluateArgs),
    /// Compare full and pose-free feature uncertainty on the three-pose scenario.
    CompareUpdates(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// EuRoC-format IMU csv.
    #[arg(long)]
    pub imu: PathBuf,
    /// JSON-lines track file.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Flat TOML calibration.
    #[arg(long)]
    pub calib: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Pose trail length.
    #[arg(long)]
    pub na: Option<usize>,
    /// Pixel noise std dev.
    #[arg(long = "sigma-uv")]
    pub sigma_uv: Option<f64>,
    /// Chi-square gate confidence.
    #[arg(long)]
    pub gate: Option<f64>,
    /// Zero-velocity updates.
    #[arg(long, value_enum, default_value = "off")]
    pub zupt: Switch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Desk,
    DeskNoiseless,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    pub scenario: Scenario,
    /// JSON scenario description; overrides `--scenario`, keeps `--seed`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override the duration (s).
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimated TUM trajectory.
    #[arg(long)]
    pub est: PathBuf,
    /// Reference TUM trajectory.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value = "rigid3d")]
    pub mode: AlignMode,
    /// Output directory for the metrics and per-pose errors.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo sample count.
    #[arg(long = "n-mc")]
    pub n_mc: Option<usize>,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Self { code: 1, error }
    }

    fn data(error: Error) -> Self {
        Self { code: 2, error }
    }

    /// Classifies by error kind when the stage alone does not decide.
    fn classify(error: Error) -> Self {
        let code = match &error {
            Error::Config(_) | Error::InvalidInput(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Stream(_)
            | Error::Timestamp { .. }
            | Error::InsufficientData(_) => 2,
            _ => 3,
        };
        Self { code, error }
    }
}

pub type CliResult = std::result::Result<(), Failure>;

/// Runs a parsed command and maps failures onto exit codes.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            error!("{}", f.error);
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

/// Runs one subcommand.
pub fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run(a) => run(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::CompareUpdates(a) => compare(&a),
    }
}

fn ensure_dir(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(Error::io(dir, e)))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    trajectory_poses: usize,
    imu_samples: usize,
    config: &'a EstimatorConfig,
    stats: &'a RunStats,
}

#[derive(Serialize)]
struct StateDump<'a> {
    error: String,
    kind: &'static str,
    time: f64,
    stats: &'a RunStats,
    state: &'a FilterState,
}

fn run(a: &RunArgs) -> CliResult {
    let calib = load_calibration(&a.calib).map_err(Failure::config)?;
    let mut cfg = EstimatorConfig::from_calibration(&calib);
    if let Some(n) = a.na {
        cfg.augmentation.n_a = n;
    }
    if let Some(s) = a.sigma_uv {
        cfg.visual.sigma_uv = s;
    }
    if let Some(g) = a.gate {
        cfg.visual.gate_confidence = g;
    }
    cfg.zupt.enabled = a.zupt == Switch::On;
    cfg.validate().map_err(Failure::config)?;

    let imu = load_euroc_imu(&a.imu).map_err(Failure::data)?;
    let frames = read_tracks(&a.tracks).map_err(Failure::data)?;
    ensure_dir(&a.out)?;
    info!(
        "{} IMU samples ({} duplicates dropped), {} frames",
        imu.samples.len(),
        imu.duplicates_dropped,
        frames.len()
    );

    let mut est = Estimator::new(cfg.clone(), calib.camera.clone(), &imu.samples)
        .map_err(Failure::classify)?;
    if let Err(e) = est.run(&imu.samples, &frames) {
        let failure = Failure::classify(e);
        if failure.code == 3 {
            let dump = a.out.join("state_dump.json");
            let record = StateDump {
                error: failure.error.to_string(),
                kind: failure.error.kind(),
                time: est.time(),
                stats: est.stats(),
                state: est.state(),
            };
            write_json(&dump, &record).map_err(Failure::config)?;
            eprintln!("state written to {}", dump.display());
        }
        return Err(failure);
    }
    let traj = est.trajectory();
    write_trajectory(a.out.join("trajectory.tum"), &traj.poses).map_err(Failure::config)?;
    let summary = RunSummary {
        trajectory_poses: traj.poses.len(),
        imu_samples: imu.samples.len(),
        config: &cfg,
        stats: est.stats(),
    };
    write_json(a.out.join("summary.json"), &summary).map_err(Failure::config)?;
    println!(
        "{} poses, {} tracks accepted, {} gated, written to {}",
        traj.poses.len(),
        est.stats().tracks_accepted,
        est.stats().tracks_gated,
        a.out.display()
    );
    Ok(())
}

/// Calibration matching a simulated dataset: camera, and process noise from
/// the simulated densities (defaults when the data is noiseless).
pub fn simulated_calibration(spec: &ScenarioSpec) -> CalibrationConfig {
    let dt = 1.0 / spec.imu_rate;
    let mut noise = if spec.noise.accel_density > 0.0 && spec.noise.gyro_density > 0.0 {
        ProcessNoiseConfig::from_noise_densities(
            spec.noise.accel_density,
            spec.noise.gyro_density,
            dt,
        )
    } else {
        ProcessNoiseConfig::default()
    };
    noise.gravity = spec.gravity;
    let mut visual = crate::visual::VisualUpdateConfig::default();
    if spec.noise.pixel_sigma > 0.0 {
        visual.sigma_uv = spec.noise.pixel_sigma;
    }
    CalibrationConfig {
        camera: spec.camera.clone(),
        noise,
        augmentation: Default::default(),
        visual,
    }
}

fn simulate(a: &SimulateArgs) -> CliResult {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::config(Error::io(path, e)))?;
            serde_json::from_str::<ScenarioSpec>(&text)
                .map_err(|e| Failure::config(Error::Config(format!("{}: {e}", path.display()))))?
        }
        None => match a.scenario {
            Scenario::Desk => ScenarioSpec::desk(a.seed),
            Scenario::DeskNoiseless => ScenarioSpec::desk_noiseless(a.seed),
        },
    };
    spec.seed = a.seed;
    if let Some(d) = a.duration {
        spec.duration = d;
    }
    spec.validate().map_err(Failure::config)?;
    let sim = synthesize(&spec).map_err(Failure::classify)?;
    ensure_dir(&a.out)?;

    let truth: Vec<StampedPose> = sim
        .truth
        .iter()
        .map(|s| StampedPose {
            t: s.t,
            p: s.p,
            q: s.q,
        })
        .collect();
    let out = &a.out;
    write_euroc_imu(out.join("imu.csv"), &sim.imu).map_err(Failure::config)?;
    write_tracks(out.join("tracks.jsonl"), &sim.frames).map_err(Failure::config)?;
    write_calibration(out.join("calib.toml"), &simulated_calibration(&spec))
        .map_err(Failure::config)?;
    write_trajectory(out.join("truth.tum"), &truth).map_err(Failure::config)?;
    write_json(out.join("scenario.json"), &spec).map_err(Failure::config)?;
    println!(
        "{} IMU samples, {} frames, path length {:.2} m, written to {}",
        sim.imu.len(),
        sim.frames.len(),
        sim.path_length(),
        out.display()
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> CliResult {
    let est = read_trajectory(&a.est).map_err(Failure::data)?;
    let reference = read_trajectory(&a.reference).map_err(Failure::data)?;
    let (metrics, stats) = evaluate(&est, &reference, a.mode).map_err(Failure::classify)?;
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_json(dir.join("metrics.json"), &metrics).map_err(Failure::config)?;
        write_pose_errors(dir.join("pose_errors.csv"), &stats.errors).map_err(Failure::config)?;
    }
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    println!("{json}");
    Ok(())
}

fn compare(a: &CompareArgs) -> CliResult {
    let mut scn = TrailScenario::three_pose(a.seed);
    if let Some(n) = a.n_mc {
        scn.n_mc = n;
    }
    scn.validate().map_err(Failure::config)?;
    let report = compare_update_models(&scn).map_err(Failure::classify)?;
    if let Some(path) = &a.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        write_json(path, &report).map_err(Failure::config)?;
    }
    println!(
        "KL(MC || full) = {:.4}, KL(MC || pose-free) = {:.4}, axis error {:.3} deg vs {:.3} deg ({} samples, {:.2} s)",
        report.full.kl_from_mc,
        report.pose_free.kl_from_mc,
        report.full_axis_error_deg,
        report.pose_free_axis_error_deg,
        report.n_mc,
        report.runtime_s
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(dir: &Path, name: &str) -> String {
        dir.join(name).display().to_string()
    }

    fn call(args: &[&str]) -> CliResult {
        let mut argv = vec!["pivo"];
        argv.extend_from_slice(args);
        dispatch(Cli::try_parse_from(argv).expect("arguments parse"))
    }

    fn code(args: &[&str]) -> i32 {
        call(args).err().map_or(0, |f| f.code)
    }

    fn simulate_into(dir: &Path, name: &str, extra: &[&str]) {
        let out = p(dir, name);
        let mut args = vec!["simulate", "--out", &out, "--duration", "10"];
        args.extend_from_slice(extra);
        call(&args).unwrap();
    }

    fn run_args<'a>(out: &'a str, files: &'a [String; 3]) -> Vec<&'a str> {
        vec![
            "run", "--imu", &files[0], "--tracks", &files[1], "--calib", &files[2], "--out", out,
        ]
    }

    fn sim_files(dir: &Path, sim: &str) -> [String; 3] {
        ["imu.csv", "tracks.jsonl", "calib.toml"].map(|f| p(dir, &format!("{sim}/{f}")))
    }

    #[test]
    fn simulate_is_deterministic() {
        let d = tempfile::tempdir().unwrap();
        simulate_into(d.path(), "a", &["--seed", "3"]);
        simulate_into(d.path(), "b", &["--seed", "3"]);
        simulate_into(d.path(), "c", &["--seed", "4"]);
        for f in ["imu.csv", "tracks.jsonl", "calib.toml", "truth.tum"] {
            let a = std::fs::read(d.path().join("a").join(f)).unwrap();
            let b = std::fs::read(d.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let a = std::fs::read(d.path().join("a/imu.csv")).unwrap();
        let c = std::fs::read(d.path().join("c/imu.csv")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_pipeline_recovers_truth() {
        let d = tempfile::tempdir().unwrap();
        simulate_into(d.path(), "sim", &["--scenario", "desk-noiseless"]);
        let files = sim_files(d.path(), "sim");
        let out = p(d.path(), "out");
        call(&run_args(&out, &files)).unwrap();
        assert!(d.path().join("out/summary.json").exists());

        let eval = p(d.path(), "eval");
        let est = p(d.path(), "out/trajectory.tum");
        let truth = p(d.path(), "sim/truth.tum");
        call(&["evaluate", "--est", &est, "--ref", &truth, "--out", &eval]).unwrap();
        let metrics: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.path().join("eval/metrics.json")).unwrap())
                .unwrap();
        let rmse = metrics["rmse"].as_f64().unwrap();
        assert!(rmse < 1e-3, "rmse {rmse}");
        assert!(d.path().join("eval/pose_errors.csv").exists());
    }

    #[test]
    fn missing_calibration_is_a_config_error() {
        let d = tempfile::tempdir().unwrap();
        simulate_into(d.path(), "sim", &[]);
        let mut files = sim_files(d.path(), "sim");
        files[2] = p(d.path(), "sim/absent.toml");
        let out = p(d.path(), "out");
        let f = call(&run_args(&out, &files)).unwrap_err();
        assert_eq!(f.code, 1);
        assert!(f.error.to_string().contains("absent.toml"), "{}", f.error);
    }

    #[test]
    fn non_monotone_imu_is_a_data_error() {
        let d = tempfile::tempdir().unwrap();
        simulate_into(d.path(), "sim", &[]);
        let path = d.path().join("sim/imu.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        // move a sample far back in time
        let moved = lines.remove(500);
        lines.insert(100, moved);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let files = sim_files(d.path(), "sim");
        let out = p(d.path(), "out");
        assert_eq!(code(&run_args(&out, &files)), 2);
    }

    #[test]
    fn evaluating_a_trajectory_against_itself_is_exact() {
        let d = tempfile::tempdir().unwrap();
        simulate_into(d.path(), "sim", &[]);
        let truth = p(d.path(), "sim/truth.tum");
        let eval = p(d.path(), "eval");
        call(&["evaluate", "--est", &truth, "--ref", &truth, "--out", &eval]).unwrap();
        let metrics: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.path().join("eval/metrics.json")).unwrap())
                .unwrap();
        assert!(metrics["rmse"].as_f64().unwrap() < 1e-9);
    }

    #[test]
    fn compare_updates_prefers_the_full_model() {
        let d = tempfile::tempdir().unwrap();
        let out = p(d.path(), "cmp/report.json");
        call(&[
            "compare-updates",
            "--seed",
            "1",
            "--n-mc",
            "10000",
            "--out",
            &out,
        ])
        .unwrap();
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        let full = report["full"]["kl_from_mc"].as_f64().unwrap();
        let free = report["pose_free"]["kl_from_mc"].as_f64().unwrap();
        assert!(full < free, "{full} vs {free}");
    }

    #[test]
    fn invalid_arguments_fail() {
        assert!(Cli::try_parse_from(["pivo", "run", "--imu", "x.csv"]).is_err());
        assert_eq!(code(&["compare-updates", "--n-mc", "1"]), 1);
    }
}
