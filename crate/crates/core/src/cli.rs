//! `ptk` command-line front end. Exit codes: 0 ok, 1 usage or parameter
//! error, 2 data/format error, 3 non-convergence or divergence flagged.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{UnitQuaternion, Vector3};
use serde::Serialize;
use serde_json::json;

use crate::calib::{read_detections_jsonl, CoverageGrid};
use crate::error::{Error, Result};
use crate::evaluate::{ate, rte, DEFAULT_MAX_DT_MS};
use crate::fusion::{
    fuse_tps_imu, totalrecon_initial_guess, totalrecon_samples_from_json, totalrecon_solve, FusionConfig, FusionNoise,
};
use crate::geom::Extrinsic;
use crate::imu::{allan_deviation, dead_reckon, fit_noise_params, log_spaced_taus, FitConfig, NavState};
use crate::perturb::{perturb_scenario, sensitivity_sweep, sweep_csv, Axis, PerturbationKind, PerturbationSpec, SweepConfig};
use crate::scenario::{Pipeline, Scenario, ScenarioManifest, SCHEMA_VERSION};
use crate::series::{read_imu_csv, read_position_csv, Channel};
use crate::synth::{AnalyticTrajectory, ClockModel, ImuGrade};
use crate::timesync::{align_imu_pair, parse_offset_log, ptp_report, AlignConfig};
use crate::trajectory::{read_tum, write_tum};

/// Directory for outputs whose path is not given explicitly.
pub const OUT_DIR_ENV: &str = "PTK_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "ptk", version, about = "Multi-sensor payload verification toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario bundle (IMU, TPS, ground truth, manifest).
    Synth(SynthArgs),
    /// Estimate the time offset between two IMUs.
    AlignImu(AlignArgs),
    /// Histogram a PTP offset log per source.
    PtpReport(PtpArgs),
    /// Write a perturbed copy of a scenario bundle.
    Perturb(PerturbArgs),
    /// Sensitivity sweep of a pipeline against one perturbation.
    Sweep(SweepArgs),
    /// Trajectory metrics.
    Eval(EvalArgs),
    /// Allan deviation of one IMU channel, with noise fit.
    Allan(AllanArgs),
    /// Strapdown dead reckoning.
    Deadreckon(DeadreckonArgs),
    /// Batch TPS + IMU fusion.
    Fuse(FuseArgs),
    /// Camera-to-prism calibration.
    Totalrecon(TotalreconArgs),
    /// Replay detections through the 3×3 coverage grid.
    Coverage(CoverageArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TrajectoryArg {
    Walking,
    Stationary,
    RichRotation,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum GradeArg {
    Tactical,
    Industrial,
    Consumer,
}

impl From<GradeArg> for ImuGrade {
    fn from(g: GradeArg) -> Self {
        match g {
            GradeArg::Tactical => ImuGrade::Tactical,
            GradeArg::Industrial => ImuGrade::Industrial,
            GradeArg::Consumer => ImuGrade::Consumer,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "walking")]
    trajectory: TrajectoryArg,
    #[arg(long, default_value_t = 30.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 200.0)]
    imu_rate: f64,
    #[arg(long, value_enum, default_value = "tactical")]
    grade: GradeArg,
    #[arg(long, default_value_t = 20.0)]
    tps_rate: f64,
    #[arg(long, default_value_t = 5e-4)]
    tps_sigma: f64,
    /// TPS dropout `start:end` in seconds; repeatable. Defaults to 4.5:9 and 17:22.
    #[arg(long = "dropout")]
    dropouts: Vec<String>,
    #[arg(long)]
    no_dropouts: bool,
    #[arg(long, default_value_t = 0.0)]
    clock_offset_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    drift_ppm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Extrinsic JSON (ref ← target); identity when omitted.
    #[arg(long)]
    rot: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    windows: usize,
    #[arg(long, default_value_t = 30.0)]
    window_s: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PtpArgs {
    #[arg(long)]
    log: PathBuf,
    /// Histogram CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PerturbSpecArgs {
    /// time_offset | translation_offset | rotation_offset
    #[arg(long)]
    kind: String,
    /// x|y|z for translations, roll|pitch|yaw for rotations.
    #[arg(long)]
    axis: Option<String>,
    /// Stream or extrinsic: imu, tps, prism.
    #[arg(long, default_value = "imu")]
    target: String,
}

impl PerturbSpecArgs {
    fn spec(&self, magnitude: f64) -> Result<PerturbationSpec> {
        let kind: PerturbationKind = self.kind.parse()?;
        let axis = self.axis.as_deref().map(str::parse::<Axis>).transpose()?;
        let spec = PerturbationSpec { kind, axis, magnitude, target: self.target.clone() };
        spec.validate()?;
        Ok(spec)
    }

    fn kind(&self) -> Result<PerturbationKind> {
        self.kind.parse()
    }
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    spec: PerturbSpecArgs,
    /// With unit: e.g. 5ms, 10mm, 0.05m, 2deg.
    #[arg(long, allow_hyphen_values = true)]
    magnitude: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    spec: PerturbSpecArgs,
    /// Comma-separated magnitudes; bare numbers are ms, m or deg by kind.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long, default_value = "fuse")]
    pipeline: String,
    #[arg(long, default_value_t = 1.0)]
    delta_m: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Metric {
    Ate,
    Rte,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(value_enum)]
    metric: Metric,
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    no_align: bool,
    #[arg(long, default_value_t = 1.0)]
    delta_m: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_DT_MS)]
    max_dt_ms: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-pose errors as CSV.
    #[arg(long)]
    errors_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AllanArgs {
    #[arg(long)]
    imu: PathBuf,
    #[arg(long, default_value = "gyro_x")]
    channel: String,
    #[arg(long, default_value_t = 10)]
    per_decade: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise-parameter fit as JSON.
    #[arg(long)]
    fit_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeadreckonArgs {
    #[arg(long)]
    imu: PathBuf,
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long)]
    tps: PathBuf,
    #[arg(long)]
    imu: PathBuf,
    /// Prism lever arm in the IMU frame: a JSON 3-array or an extrinsic (imu ← prism).
    #[arg(long)]
    prism: PathBuf,
    #[arg(long, default_value_t = 5e-4)]
    tps_sigma: f64,
    #[arg(long, value_enum, default_value = "tactical")]
    grade: GradeArg,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sigma_out: Option<PathBuf>,
    /// Solver report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TotalreconArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = 1440)]
    width: u32,
    #[arg(long, default_value_t = 1080)]
    height: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::AlignImu(a) => align(a),
        Command::PtpReport(a) => ptp(a),
        Command::Perturb(a) => perturb(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Allan(a) => allan(a),
        Command::Deadreckon(a) => deadreckon(a),
        Command::Fuse(a) => fuse(a),
        Command::Totalrecon(a) => totalrecon(a),
        Command::Coverage(a) => coverage(a),
    }
}

fn out_path(given: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match given {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")).join(default_name),
    }
}

fn open(p: &Path) -> Result<BufReader<File>> {
    File::open(p).map(BufReader::new).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(p)?))
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    let mut w = create(p)?;
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Report envelope shared by every JSON output.
fn write_report<T: Serialize>(p: &Path, command: &str, params: serde_json::Value, result: &T) -> Result<()> {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "params": params,
        "result": result,
    });
    write_text(p, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn parse_dropout(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Parameter(format!("dropout must be start:end seconds, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Magnitude in the kind's canonical unit (ms, m or deg). Accepted
/// suffixes: ms, us, s; m, cm, mm; deg, rad. Bare numbers are canonical.
pub fn parse_magnitude(s: &str, kind: PerturbationKind) -> Result<f64> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.trim().parse().map_err(|_| Error::Parameter(format!("bad magnitude `{s}`")))?;
    let scale = match (kind, unit) {
        (_, "") => 1.0,
        (PerturbationKind::TimeOffset, "ms") => 1.0,
        (PerturbationKind::TimeOffset, "us") => 1e-3,
        (PerturbationKind::TimeOffset, "s") => 1e3,
        (PerturbationKind::TranslationOffset, "m") => 1.0,
        (PerturbationKind::TranslationOffset, "cm") => 1e-2,
        (PerturbationKind::TranslationOffset, "mm") => 1e-3,
        (PerturbationKind::RotationOffset, "deg") => 1.0,
        (PerturbationKind::RotationOffset, "rad") => 1f64.to_degrees(),
        _ => return Err(Error::Parameter(format!("unit `{unit}` does not fit {kind:?}"))),
    };
    Ok(v * scale)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let trajectory = match a.trajectory {
        TrajectoryArg::Walking => AnalyticTrajectory::walking(a.duration_s),
        TrajectoryArg::Stationary => AnalyticTrajectory::stationary(a.duration_s),
        TrajectoryArg::RichRotation => AnalyticTrajectory::rich_rotation(a.duration_s),
    };
    let dropouts = if a.no_dropouts {
        vec![]
    } else if a.dropouts.is_empty() {
        ScenarioManifest::walking_with_dropouts(a.seed).tps_dropouts_s
    } else {
        a.dropouts.iter().map(|s| parse_dropout(s)).collect::<Result<_>>()?
    };
    let base = ScenarioManifest::walking_with_dropouts(a.seed);
    let manifest = ScenarioManifest {
        trajectory,
        imu_rate_hz: a.imu_rate,
        imu_noise: ImuGrade::from(a.grade).noise_model(a.seed),
        imu_clock: ClockModel { offset_ns: (a.clock_offset_ms * 1e6).round() as i64, drift_ppm: a.drift_ppm, ..ClockModel::ideal() },
        tps_rate_hz: a.tps_rate,
        tps_sigma_m: a.tps_sigma,
        tps_dropouts_s: dropouts,
        ground_truth_rate_hz: a.imu_rate,
        ..base
    };
    let sc = Scenario::synthesize(manifest)?;
    let dir = out_path(&a.out, "scenario");
    sc.write_dir(&dir)?;
    log::info!("scenario written to {}", dir.display());
    Ok(EXIT_OK)
}

fn align(a: AlignArgs) -> Result<i32> {
    let ra = read_imu_csv(open(&a.reference)?, "ref")?;
    let rb = read_imu_csv(open(&a.target)?, "target")?;
    let rot = match &a.rot {
        Some(p) => *Extrinsic::from_json(&read_text(p)?)?.pose.rotation(),
        None => UnitQuaternion::identity(),
    };
    let cfg = AlignConfig { windows: a.windows, window_s: a.window_s, ..AlignConfig::default() };
    let est = align_imu_pair(&ra, &rb, &rot, &cfg)?;
    let params = json!({
        "ref": a.reference, "target": a.target, "rot": a.rot,
        "windows": cfg.windows, "window_s": cfg.window_s, "resample_hz": cfg.resample_hz,
        "max_lag_ms": cfg.max_lag_ms, "tol_ms": cfg.tol_ms, "max_iter": cfg.max_iter,
    });
    write_report(&out_path(&a.out, "align_report.json"), "align-imu", params, &est)?;
    Ok(if est.axes.iter().all(|x| x.flagged) { EXIT_NOT_CONVERGED } else { EXIT_OK })
}

fn ptp(a: PtpArgs) -> Result<i32> {
    let (rows, errors) = parse_offset_log(open(&a.log)?)?;
    let report = ptp_report(&rows, errors)?;
    let mut w = create(&out_path(&a.out, "ptp_hist.csv"))?;
    crate::timesync::ptp::write_histogram_csv(&report, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.report {
        write_report(p, "ptp-report", json!({ "log": a.log }), &report)?;
    }
    Ok(EXIT_OK)
}

fn perturb(a: PerturbArgs) -> Result<i32> {
    let spec = a.spec.spec(parse_magnitude(&a.magnitude, a.spec.kind()?)?)?;
    let sc = Scenario::load(&a.input)?;
    let p = perturb_scenario(&sc, &spec)?;
    p.write_dir(&a.out)?;
    write_report(&a.out.join("perturbation.json"), "perturb", json!({ "in": a.input }), &spec)?;
    Ok(EXIT_OK)
}

fn sweep(a: SweepArgs) -> Result<i32> {
    let kind = a.spec.kind()?;
    let values: Vec<f64> = a.values.split(',').map(|v| parse_magnitude(v, kind)).collect::<Result<_>>()?;
    let pipeline: Pipeline = a.pipeline.parse()?;
    let spec = a.spec.spec(0.0)?;
    let sc = Scenario::load(&a.scenario)?;
    let cfg = SweepConfig { rte_delta_m: a.delta_m, ..SweepConfig::new(pipeline) };
    let rows = sensitivity_sweep(&sc, &spec, &values, &cfg)?;
    write_text(&out_path(&a.out, "sweep.csv"), &sweep_csv(&rows))?;
    Ok(if rows.iter().any(|r| r.divergent) { EXIT_NOT_CONVERGED } else { EXIT_OK })
}

fn eval(a: EvalArgs) -> Result<i32> {
    let est = read_tum(open(&a.est)?, "world", "body")?;
    let reference = read_tum(open(&a.reference)?, "world", "body")?;
    let report = match a.metric {
        Metric::Ate => ate(&est, &reference, !a.no_align, a.max_dt_ms)?,
        Metric::Rte => rte(&est, &reference, a.delta_m, a.max_dt_ms)?,
    };
    let params = json!({ "est": a.est, "ref": a.reference });
    let name = match a.metric {
        Metric::Ate => "ate",
        Metric::Rte => "rte",
    };
    write_report(&out_path(&a.out, &format!("{name}_report.json")), &format!("eval {name}"), params, &report)?;
    if let Some(p) = &a.errors_out {
        write_text(p, &report.errors_csv())?;
    }
    Ok(EXIT_OK)
}

fn allan(a: AllanArgs) -> Result<i32> {
    let ch: Channel = a.channel.parse()?;
    let imu = read_imu_csv(open(&a.imu)?, "imu")?;
    let x = imu.channel(ch);
    let taus = log_spaced_taus(x.len(), imu.rate_hz, a.per_decade);
    let curve = allan_deviation(ch.name(), &x, imu.rate_hz, &taus)?;
    write_text(&out_path(&a.out, "allan.csv"), &curve.to_csv())?;
    if let Some(p) = &a.fit_out {
        let cfg = FitConfig::default();
        let fit = fit_noise_params(&curve, &cfg)?;
        let params = json!({ "imu": a.imu, "channel": ch.name(), "rate_hz": imu.rate_hz, "per_decade": a.per_decade, "fit": cfg });
        write_report(p, "allan", params, &fit)?;
    }
    Ok(EXIT_OK)
}

fn deadreckon(a: DeadreckonArgs) -> Result<i32> {
    let imu = read_imu_csv(open(&a.imu)?, "imu")?;
    let init = NavState::from_json(&read_text(&a.init)?)?;
    let traj = dead_reckon(&imu, &init, &crate::synth::gravity_vector())?;
    write_tum(&traj, create(&out_path(&a.out, "deadreckon.tum"))?)?;
    Ok(EXIT_OK)
}

fn read_prism(p: &Path) -> Result<Vector3<f64>> {
    let s = read_text(p)?;
    if let Ok(v) = serde_json::from_str::<[f64; 3]>(&s) {
        return Ok(Vector3::from(v));
    }
    Ok(*Extrinsic::from_json(&s)?.pose.translation())
}

fn fuse(a: FuseArgs) -> Result<i32> {
    let tps = read_position_csv(open(&a.tps)?, "world", a.tps_sigma)?;
    let imu = read_imu_csv(open(&a.imu)?, "imu")?;
    let prism = read_prism(&a.prism)?;
    let mut cfg = FusionConfig { noise: FusionNoise::from(&ImuGrade::from(a.grade).noise_model(0)), ..Default::default() };
    cfg.lm.max_iterations = a.max_iterations;
    let fused = fuse_tps_imu(&tps, &imu, &prism, &cfg)?;
    write_tum(&fused.trajectory, create(&out_path(&a.out, "fused.tum"))?)?;
    write_text(&out_path(&a.sigma_out, "fused_sigma.csv"), &fused.sigma_csv())?;
    if let Some(p) = &a.report {
        let result = json!({
            "lm": fused.report,
            "dropouts_ns": fused.dropouts.iter().map(|(s, e)| [s.nanos(), e.nanos()]).collect::<Vec<_>>(),
            "weak_yaw_keyframes": fused.weak_yaw.iter().filter(|&&w| w).count(),
            "keyframes": fused.states.len(),
        });
        let params = json!({ "tps": a.tps, "imu": a.imu, "prism_in_imu": <[f64; 3]>::from(prism), "config": cfg });
        write_report(p, "fuse", params, &result)?;
    }
    if !fused.report.converged {
        eprintln!(
            "fusion did not converge after {} iterations (gradient reduction {:.3e})",
            fused.report.iterations,
            fused.report.gradient_reduction()
        );
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn totalrecon(a: TotalreconArgs) -> Result<i32> {
    let samples = totalrecon_samples_from_json(&read_text(&a.samples)?)?;
    let init = totalrecon_initial_guess(&samples)?;
    let (state, report) = totalrecon_solve(&samples, &init)?;
    let t = &state.target_pose_world;
    let result = json!({
        "prism_in_camera_m": <[f64; 3]>::from(state.prism_in_camera),
        "target_pose_world": { "translation_m": <[f64; 3]>::from(*t.translation()), "quaternion_xyzw": t.quaternion_xyzw() },
        "report": report,
    });
    write_report(&out_path(&a.out, "totalrecon.json"), "totalrecon", json!({ "samples": a.samples }), &result)?;
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

#[derive(Serialize)]
struct CameraCoverage {
    grid: CoverageGrid,
    accepted: usize,
    rejected: usize,
    dropped_corners: usize,
    decisions: Vec<bool>,
}

fn coverage(a: CoverageArgs) -> Result<i32> {
    let dets = read_detections_jsonl(&read_text(&a.detections)?)?;
    let mut cams: std::collections::BTreeMap<String, CameraCoverage> = Default::default();
    for d in &dets {
        let entry = match cams.get_mut(&d.camera) {
            Some(e) => e,
            None => cams.entry(d.camera.clone()).or_insert(CameraCoverage {
                grid: CoverageGrid::new(a.width, a.height)?,
                accepted: 0,
                rejected: 0,
                dropped_corners: 0,
                decisions: vec![],
            }),
        };
        let dec = entry.grid.accumulate(d);
        entry.dropped_corners += dec.dropped_corners;
        if dec.accepted {
            entry.accepted += 1;
        } else {
            entry.rejected += 1;
        }
        entry.decisions.push(dec.accepted);
    }
    let params = json!({ "detections": a.detections, "width": a.width, "height": a.height, "capacity": crate::calib::BLOCK_CAPACITY });
    write_report(&out_path(&a.out, "coverage.json"), "coverage", params, &cams)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitudes_with_units() {
        assert_eq!(parse_magnitude("2deg", PerturbationKind::RotationOffset).unwrap(), 2.0);
        assert_eq!(parse_magnitude("10mm", PerturbationKind::TranslationOffset).unwrap(), 0.01);
        assert_eq!(parse_magnitude("-5ms", PerturbationKind::TimeOffset).unwrap(), -5.0);
        assert_eq!(parse_magnitude("1.5", PerturbationKind::TimeOffset).unwrap(), 1.5);
        assert!(parse_magnitude("2deg", PerturbationKind::TimeOffset).is_err());
        assert!(parse_magnitude("abc", PerturbationKind::TimeOffset).is_err());
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(dispatch(["ptk", "frobnicate"]), EXIT_USAGE);
        assert_eq!(dispatch(["ptk"]), EXIT_USAGE);
        assert_eq!(dispatch(["ptk", "--help"]), EXIT_OK);
    }

    #[test]
    fn dropout_syntax() {
        assert_eq!(parse_dropout("4.5:9").unwrap(), (4.5, 9.0));
        assert!(parse_dropout("4.5-9").is_err());
    }
}
