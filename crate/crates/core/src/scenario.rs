//! Synthetic scenario bundles (IMU, TPS, ground truth, extrinsics) and the
//! internal dead-reckoning and fusion pipelines run against them.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{ate, rte, MetricReport};
use crate::fusion::{fuse_tps_imu, FusedTrajectory, FusionConfig, FusionNoise};
use crate::geom::{so3_log, Extrinsic, Pose, Timestamp};
use crate::imu::{dead_reckon, ImuBias, NavState};
use crate::series::{read_imu_csv, read_position_csv, write_imu_csv, write_position_csv, ImuSeries, PositionSeries};
use crate::synth::{gen_trajectory, gravity_vector, simulate_imu, simulate_tps, AnalyticTrajectory, ClockModel, ImuGrade, ImuNoiseModel};
use crate::trajectory::{read_tum, write_tum, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Files of a scenario bundle, relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFiles {
    pub imu: String,
    pub tps: String,
    pub ground_truth: String,
    /// body ← imu
    pub imu_extrinsic: String,
}

impl Default for ScenarioFiles {
    fn default() -> Self {
        ScenarioFiles {
            imu: "imu.csv".into(),
            tps: "tps.csv".into(),
            ground_truth: "groundtruth.tum".into(),
            imu_extrinsic: "imu_extrinsic.json".into(),
        }
    }
}

/// Parameter echo and file index of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub schema_version: u32,
    pub files: ScenarioFiles,
    pub imu_label: String,
    pub tps_label: String,
    pub trajectory: AnalyticTrajectory,
    pub imu_rate_hz: f64,
    pub imu_noise: ImuNoiseModel,
    pub imu_clock: ClockModel,
    pub tps_rate_hz: f64,
    pub tps_sigma_m: f64,
    pub tps_dropouts_s: Vec<(f64, f64)>,
    pub tps_seed: u64,
    pub prism_in_body: [f64; 3],
    pub ground_truth_rate_hz: f64,
    pub seed: u64,
}

impl ScenarioManifest {
    /// 30 s walk, tactical IMU at 200 Hz, 20 Hz TPS with σ 0.5 mm and two
    /// dropouts (4.5–9 s, 17–22 s).
    pub fn walking_with_dropouts(seed: u64) -> Self {
        ScenarioManifest {
            schema_version: SCHEMA_VERSION,
            files: ScenarioFiles::default(),
            imu_label: "imu".into(),
            tps_label: "tps".into(),
            trajectory: AnalyticTrajectory::walking(30.0),
            imu_rate_hz: 200.0,
            imu_noise: ImuGrade::Tactical.noise_model(seed),
            imu_clock: ClockModel::ideal(),
            tps_rate_hz: 20.0,
            tps_sigma_m: 5e-4,
            tps_dropouts_s: vec![(4.5, 9.0), (17.0, 22.0)],
            tps_seed: seed.wrapping_add(0x5eed),
            prism_in_body: [0.1, -0.05, 0.3],
            ground_truth_rate_hz: 200.0,
            seed,
        }
    }
}

/// A loaded or synthesized scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub manifest: ScenarioManifest,
    pub imu: ImuSeries,
    pub tps: PositionSeries,
    /// world ← body
    pub ground_truth: Trajectory,
    /// body ← imu
    pub imu_extrinsic: Extrinsic,
    pub prism_in_body: Vector3<f64>,
}

impl Scenario {
    /// Simulates all streams described by `manifest`. The IMU frame coincides
    /// with the body frame.
    pub fn synthesize(manifest: ScenarioManifest) -> Result<Self> {
        let traj = &manifest.trajectory;
        let mut imu = simulate_imu(traj, &manifest.imu_noise, &manifest.imu_clock, manifest.imu_rate_hz)?;
        imu.label = manifest.imu_label.clone();
        let prism = Vector3::from(manifest.prism_in_body);
        let tps = simulate_tps(
            traj,
            &prism,
            manifest.tps_rate_hz,
            manifest.tps_sigma_m,
            &manifest.tps_dropouts_s,
            manifest.tps_seed,
        )?;
        let ground_truth = gen_trajectory(traj, manifest.ground_truth_rate_hz)?;
        Ok(Scenario {
            imu,
            tps,
            ground_truth,
            imu_extrinsic: Extrinsic::new(Pose::identity("body", "imu")),
            prism_in_body: prism,
            manifest,
        })
    }

    /// Writes the manifest and every referenced file into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let f = &self.manifest.files;
        write_imu_csv(&self.imu, BufWriter::new(File::create(dir.join(&f.imu))?))?;
        write_position_csv(&self.tps, BufWriter::new(File::create(dir.join(&f.tps))?))?;
        write_tum(&self.ground_truth, BufWriter::new(File::create(dir.join(&f.ground_truth))?))?;
        fs::write(dir.join(&f.imu_extrinsic), self.imu_extrinsic.to_json())?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    /// Loads a bundle from a directory containing `manifest.json`, or from
    /// the manifest path itself.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, manifest_path): (PathBuf, PathBuf) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let manifest: ScenarioManifest = serde_json::from_str(&read_file(&manifest_path)?)?;
        let f = &manifest.files;
        let open = |name: &str| -> Result<BufReader<File>> {
            let p = dir.join(name);
            File::open(&p)
                .map(BufReader::new)
                .map_err(|e| Error::Data(format!("scenario file {}: {e}", p.display())))
        };
        let imu = read_imu_csv(open(&f.imu)?, &manifest.imu_label)?;
        let tps = read_position_csv(open(&f.tps)?, "world", manifest.tps_sigma_m)?;
        let ground_truth = read_tum(open(&f.ground_truth)?, "world", "body")?;
        let imu_extrinsic = Extrinsic::from_json(&read_file(&dir.join(&f.imu_extrinsic))?)?;
        if imu_extrinsic.pose.frame_from().as_str() != "body" || imu_extrinsic.pose.frame_to().as_str() != "imu" {
            return Err(Error::Frame {
                expected: "body->imu".into(),
                found: format!("{}->{}", imu_extrinsic.pose.frame_from(), imu_extrinsic.pose.frame_to()),
            });
        }
        Ok(Scenario { prism_in_body: Vector3::from(manifest.prism_in_body), imu, tps, ground_truth, imu_extrinsic, manifest })
    }

    /// Prism lever arm expressed in the IMU frame.
    pub fn prism_in_imu(&self) -> Vector3<f64> {
        self.imu_extrinsic.pose.inverse().transform_point(&self.prism_in_body)
    }

    /// Spatial extent of the ground truth: bounding-box diagonal, at least 1 m.
    pub fn span_m(&self) -> f64 {
        let p = self.ground_truth.positions();
        let lo = p.iter().fold(Vector3::repeat(f64::INFINITY), |a, b| a.inf(b));
        let hi = p.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, b| a.sup(b));
        (hi - lo).norm().max(1.0)
    }
}

fn read_file(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

/// Internal estimator used for evaluation and sensitivity sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Deadreckon,
    Fuse,
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deadreckon" => Ok(Pipeline::Deadreckon),
            "fuse" => Ok(Pipeline::Fuse),
            _ => Err(Error::Parameter(format!("unknown pipeline `{s}` (deadreckon|fuse)"))),
        }
    }
}

/// Body trajectory estimated by a pipeline.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// world ← body
    pub trajectory: Trajectory,
    /// Present for the fusion pipeline.
    pub fused: Option<FusedTrajectory>,
}

impl PipelineOutput {
    pub fn converged(&self) -> bool {
        self.fused.as_ref().is_none_or(|f| f.report.converged)
    }
}

fn imu_to_body(traj: &Trajectory, ext: &Extrinsic) -> Result<Trajectory> {
    let imu_body = ext.pose.inverse();
    let samples = traj
        .iter()
        .map(|(t, p)| Ok((t, p.with_frames("world", "imu").compose(&imu_body)?)))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new("world", "body", samples)
}

/// Ground-truth body state at `t` (velocity and body rate by central differences).
fn truth_state(gt: &Trajectory, t: Timestamp) -> Result<(Pose, Vector3<f64>, Vector3<f64>)> {
    let h = 2_500_000;
    let pose = gt.interpolate(t)?;
    let (a, b) = (gt.interpolate(t + (-h))?, gt.interpolate(t + h)?);
    let dt = 2.0 * h as f64 * 1e-9;
    let v = (b.translation() - a.translation()) / dt;
    let w = so3_log(&(a.rotation().inverse() * b.rotation())) / dt;
    Ok((pose, v, w))
}

/// Strapdown integration of the whole IMU stream, initialised from ground
/// truth through the scenario's IMU extrinsic.
pub fn run_deadreckon(sc: &Scenario) -> Result<PipelineOutput> {
    let gt_start = sc.ground_truth.start().ok_or_else(|| Error::Data("empty ground truth".into()))?;
    let gt_end = sc.ground_truth.end().expect("non-empty");
    let margin = 5_000_000;
    let first = sc
        .imu
        .samples()
        .iter()
        .position(|s| s.t >= gt_start + margin)
        .ok_or_else(|| Error::Data("IMU stream does not overlap the ground truth".into()))?;
    let imu = ImuSeries::new(sc.imu.label.clone(), sc.imu.rate_hz, sc.imu.samples()[first..].to_vec())?;
    let t0 = imu.samples()[0].t;
    if t0 + margin > gt_end {
        return Err(Error::Data("IMU stream does not overlap the ground truth".into()));
    }
    let (body, v_b, w_b) = truth_state(&sc.ground_truth, t0)?;
    let ext = &sc.imu_extrinsic.pose;
    let r_wb: UnitQuaternion<f64> = *body.rotation();
    let r_wi = r_wb * ext.rotation();
    let p_wi = body.transform_point(ext.translation());
    let v_wi = v_b + r_wb * w_b.cross(ext.translation());
    let init = NavState::new(t0, r_wi, p_wi, v_wi, ImuBias::zero());
    let traj = dead_reckon(&imu, &init, &gravity_vector())?;
    Ok(PipelineOutput { trajectory: imu_to_body(&traj, &sc.imu_extrinsic)?, fused: None })
}

/// Batch TPS + IMU fusion weighted by the scenario's IMU noise model.
pub fn run_fuse(sc: &Scenario, cfg: Option<&FusionConfig>) -> Result<PipelineOutput> {
    let cfg = match cfg {
        Some(c) => c.clone(),
        None => FusionConfig { noise: FusionNoise::from(&sc.manifest.imu_noise), ..Default::default() },
    };
    let fused = fuse_tps_imu(&sc.tps, &sc.imu, &sc.prism_in_imu(), &cfg)?;
    let trajectory = imu_to_body(&fused.trajectory, &sc.imu_extrinsic)?;
    Ok(PipelineOutput { trajectory, fused: Some(fused) })
}

pub fn run_pipeline(sc: &Scenario, pipeline: Pipeline) -> Result<PipelineOutput> {
    match pipeline {
        Pipeline::Deadreckon => run_deadreckon(sc),
        Pipeline::Fuse => run_fuse(sc, None),
    }
}

/// ATE (SE(3)-aligned) and RTE of `est` against ground truth interpolated at
/// the estimate's timestamps. RTE is `None` when the path is shorter than
/// `delta_m`.
pub fn evaluate_against_truth(
    est: &Trajectory,
    gt: &Trajectory,
    delta_m: f64,
) -> Result<(MetricReport, Option<MetricReport>)> {
    let (start, end) = match (gt.start(), gt.end()) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(Error::Data("empty ground truth".into())),
    };
    let mut e_s = Vec::new();
    let mut g_s = Vec::new();
    for (t, p) in est.iter() {
        if t >= start && t <= end {
            e_s.push((t, p.clone()));
            g_s.push((t, gt.interpolate(t)?));
        }
    }
    if e_s.len() < 3 {
        return Err(Error::Data("estimate and ground truth barely overlap".into()));
    }
    let e = Trajectory::new(est.frame_from().clone(), est.frame_to().clone(), e_s)?;
    let g = Trajectory::new(gt.frame_from().clone(), gt.frame_to().clone(), g_s)?;
    let a = ate(&e, &g, true, 0.0)?;
    let r = rte(&e, &g, delta_m, 0.0).ok();
    Ok((a, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> ScenarioManifest {
        ScenarioManifest {
            trajectory: AnalyticTrajectory::walking(8.0),
            tps_dropouts_s: vec![(3.0, 5.0)],
            ..ScenarioManifest::walking_with_dropouts(seed)
        }
    }

    #[test]
    fn bundle_round_trip_is_lossless() {
        let sc = Scenario::synthesize(short(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sc.write_dir(dir.path()).unwrap();
        let back = Scenario::load(dir.path()).unwrap();
        assert_eq!(back.manifest, sc.manifest);
        assert_eq!(back.imu, sc.imu);
        assert_eq!(back.tps, sc.tps);
        assert_eq!(back.ground_truth.stamps(), sc.ground_truth.stamps());
        for (a, b) in back.ground_truth.poses().iter().zip(sc.ground_truth.poses()) {
            assert!((a.translation() - b.translation()).norm() == 0.0 && a.angle_to(b) < 1e-12);
        }
        assert_eq!(back.imu_extrinsic, sc.imu_extrinsic);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let sc = Scenario::synthesize(short(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sc.write_dir(dir.path()).unwrap();
        fs::remove_file(dir.path().join("tps.csv")).unwrap();
        assert!(matches!(Scenario::load(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn noiseless_deadreckon_tracks_truth() {
        let m = ScenarioManifest { imu_noise: ImuNoiseModel::noiseless(), ..short(0) };
        let sc = Scenario::synthesize(m).unwrap();
        let out = run_deadreckon(&sc).unwrap();
        let (a, _) = evaluate_against_truth(&out.trajectory, &sc.ground_truth, 1.0).unwrap();
        assert!(a.rmse < 1e-3, "{}", a.rmse);
    }

    #[test]
    fn fusion_pipeline_beats_deadreckoning() {
        let sc = Scenario::synthesize(short(1)).unwrap();
        let f = run_fuse(&sc, None).unwrap();
        assert!(f.converged());
        let (af, _) = evaluate_against_truth(&f.trajectory, &sc.ground_truth, 1.0).unwrap();
        assert!(af.rmse < 2e-3, "{}", af.rmse);
    }
}
