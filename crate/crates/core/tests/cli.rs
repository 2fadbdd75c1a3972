use std::fs;
use std::path::Path;
use std::process::Command;

use nalgebra::{UnitQuaternion, Vector3};
use payload_toolkit::calib::DetectionEvent;
use payload_toolkit::fusion::totalrecon::synthetic_samples;
use payload_toolkit::fusion::{totalrecon_samples_to_json, TotalReconState};
use payload_toolkit::imu::{ImuBias, NavState};
use payload_toolkit::series::write_imu_csv;
use payload_toolkit::synth::{simulate_imu, AnalyticTrajectory, ClockModel, ImuNoiseModel};
use payload_toolkit::{Pose, Timestamp};
use serde_json::Value;

fn ptk(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ptk")).args(args).output().expect("ptk runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_scenario(dir: &Path, seed: &str) {
    let (code, err) = ptk(&["synth", "--out", p(dir), "--duration-s", "12", "--dropout", "4:6", "--seed", seed]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn synth_is_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_scenario(&a, "7");
    small_scenario(&b, "7");
    for f in ["manifest.json", "imu.csv", "tps.csv", "groundtruth.tum", "imu_extrinsic.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["seed"], 7);
    assert!(fs::read_to_string(a.join("imu.csv")).unwrap().starts_with("t_ns,gyro_x,gyro_y,gyro_z,accel_x,accel_y,accel_z"));
}

#[test]
fn eval_of_identical_trajectories_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    small_scenario(tmp.path(), "1");
    let gt = tmp.path().join("groundtruth.tum");
    let out = tmp.path().join("ate.json");
    let (code, err) = ptk(&["eval", "ate", "--est", p(&gt), "--ref", p(&gt), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out);
    assert_eq!(r["schema_version"], 1);
    assert!(r["result"]["rmse"].as_f64().unwrap() < 1e-12);
    assert!(r["result"]["max"].as_f64().unwrap() < 1e-12);
    let out = tmp.path().join("rte.json");
    assert_eq!(ptk(&["eval", "rte", "--est", p(&gt), "--ref", p(&gt), "--out", p(&out)]).0, 0);
    assert!(json(&out)["result"]["max"].as_f64().unwrap() < 1e-12);
}

#[test]
fn align_with_disjoint_ranges_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let traj = AnalyticTrajectory::rich_rotation(5.0);
    let a = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 100.0).unwrap();
    let b = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::offset_ms(60_000.0), 100.0).unwrap();
    write_imu_csv(&a, fs::File::create(tmp.path().join("a.csv")).unwrap()).unwrap();
    write_imu_csv(&b, fs::File::create(tmp.path().join("b.csv")).unwrap()).unwrap();
    let (code, err) = ptk(&[
        "align-imu",
        "--ref",
        p(&tmp.path().join("a.csv")),
        "--target",
        p(&tmp.path().join("b.csv")),
        "--out",
        p(&tmp.path().join("r.json")),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("error"));
}

#[test]
fn align_recovers_a_clock_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let traj = AnalyticTrajectory::rich_rotation(100.0);
    let a = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 200.0).unwrap();
    let b = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::offset_ms(2.5), 200.0).unwrap();
    write_imu_csv(&a, fs::File::create(tmp.path().join("a.csv")).unwrap()).unwrap();
    write_imu_csv(&b, fs::File::create(tmp.path().join("b.csv")).unwrap()).unwrap();
    let out = tmp.path().join("r.json");
    let (fa, fb) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    let args = ["align-imu", "--ref", p(&fa), "--target", p(&fb), "--out", p(&out)];
    assert_eq!(ptk(&args).0, 0);
    let r = json(&out);
    assert_eq!(r["result"]["units"], "ms");
    assert!((r["result"]["grand_mean_ms"].as_f64().unwrap() - 2.5).abs() < 0.01);
}

#[test]
fn fuse_converges_and_reports_exit_3_when_capped() {
    let tmp = tempfile::tempdir().unwrap();
    small_scenario(tmp.path(), "2");
    fs::write(tmp.path().join("prism.json"), "[0.1, -0.05, 0.3]").unwrap();
    let d = |f: &str| tmp.path().join(f);
    let base = |out: &str, sigma: &str| {
        vec![
            "fuse".to_string(),
            "--tps".into(),
            p(&d("tps.csv")).into(),
            "--imu".into(),
            p(&d("imu.csv")).into(),
            "--prism".into(),
            p(&d("prism.json")).into(),
            "--out".into(),
            p(&d(out)).into(),
            "--sigma-out".into(),
            p(&d(sigma)).into(),
        ]
    };
    let args = base("fused.tum", "sigma.csv");
    let (code, err) = ptk(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(d("sigma.csv")).unwrap().starts_with("t_ns,sigma_x"));

    let mut capped = base("capped.tum", "capped.csv");
    capped.extend(["--max-iterations".into(), "1".into(), "--report".into(), p(&d("rep.json")).into()]);
    let (code, _) = ptk(&capped.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, 3);
    assert!(d("capped.tum").exists() && d("capped.csv").exists());
    assert_eq!(json(&d("rep.json"))["result"]["lm"]["converged"], false);
}

#[test]
fn perturb_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = tmp.path().join("sc");
    small_scenario(&sc, "3");
    let pd = tmp.path().join("sc_p");
    let (code, err) = ptk(&[
        "perturb", "--in", p(&sc), "--kind", "rotation_offset", "--axis", "pitch", "--magnitude", "2deg", "--out", p(&pd),
    ]);
    assert_eq!(code, 0, "{err}");
    let e = fs::read_to_string(pd.join("imu_extrinsic.json")).unwrap();
    let q = payload_toolkit::Extrinsic::from_json(&e).unwrap();
    assert!((q.pose.rotation().angle() - 2f64.to_radians()).abs() < 1e-12);
    assert_eq!(fs::read(sc.join("imu.csv")).unwrap(), fs::read(pd.join("imu.csv")).unwrap());

    let (code, _) = ptk(&["perturb", "--in", p(&sc), "--kind", "rotation_offset", "--axis", "x", "--magnitude", "2deg", "--out", p(&pd)]);
    assert_eq!(code, 1);

    let csv = tmp.path().join("sweep.csv");
    let (code, err) = ptk(&[
        "sweep", "--scenario", p(&sc), "--kind", "time_offset", "--values", "0,1,5", "--pipeline", "deadreckon", "--out", p(&csv),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "index,magnitude,ate_m,rte_m,converged,divergent");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0,") && lines[3].starts_with("2,5,"));
}

#[test]
fn allan_and_deadreckon() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |f: &str| tmp.path().join(f);
    let noise = ImuNoiseModel { gyro_noise_density: 1e-3, ..ImuNoiseModel::noiseless() }.with_seed(4);
    let traj = AnalyticTrajectory::stationary(600.0);
    let imu = simulate_imu(&traj, &noise, &ClockModel::ideal(), 100.0).unwrap();
    write_imu_csv(&imu, fs::File::create(d("imu.csv")).unwrap()).unwrap();
    let (code, err) =
        ptk(&["allan", "--imu", p(&d("imu.csv")), "--channel", "gyro_y", "--out", p(&d("a.csv")), "--fit-out", p(&d("fit.json"))]);
    assert_eq!(code, 0, "{err}");
    let fit = json(&d("fit.json"));
    let wn = fit["result"]["white_noise_density"].as_f64().unwrap();
    assert!((wn - 1e-3).abs() < 1.5e-4, "{wn}");
    assert_eq!(ptk(&["allan", "--imu", p(&d("imu.csv")), "--channel", "gyro_w"]).0, 1);

    let init = NavState::new(Timestamp(0), UnitQuaternion::identity(), Vector3::zeros(), Vector3::zeros(), ImuBias::zero());
    fs::write(d("init.json"), init.to_json()).unwrap();
    let (code, err) = ptk(&["deadreckon", "--imu", p(&d("imu.csv")), "--init", p(&d("init.json")), "--out", p(&d("dr.tum"))]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(d("dr.tum")).unwrap().lines().filter(|l| !l.starts_with('#')).count(), imu.len());
}

#[test]
fn ptp_totalrecon_and_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |f: &str| tmp.path().join(f);
    fs::write(d("ptp.csv"), "t_ns,offset_ns,source\n0,50,cam0\n1000000000,2000,cam0\nbad\n0,-3000000,lidar\n").unwrap();
    let (code, err) = ptk(&["ptp-report", "--log", p(&d("ptp.csv")), "--out", p(&d("h.csv")), "--report", p(&d("h.json"))]);
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(d("h.csv")).unwrap().contains("cam0"));
    assert_eq!(json(&d("h.json"))["result"]["row_errors"].as_array().unwrap().len(), 1);

    let truth = TotalReconState {
        prism_in_camera: Vector3::new(0.1, 0.2, -0.05),
        target_pose_world: Pose::new("world", "target", UnitQuaternion::from_euler_angles(0.0, 0.1, 0.7), Vector3::new(3.0, 1.0, 0.5)),
    };
    fs::write(d("samples.json"), totalrecon_samples_to_json(&synthetic_samples(&truth, 10, 25.0, 0.0, 2))).unwrap();
    let (code, err) = ptk(&["totalrecon", "--samples", p(&d("samples.json")), "--out", p(&d("tr.json"))]);
    assert_eq!(code, 0, "{err}");
    let est: Vec<f64> = serde_json::from_value(json(&d("tr.json"))["result"]["prism_in_camera_m"].clone()).unwrap();
    assert!((Vector3::from_vec(est) - truth.prism_in_camera).norm() < 1e-6);

    let corners: Vec<[f64; 2]> = (0..144).map(|k| [(k % 12) as f64 * 120.0 + 5.0, (k / 12) as f64 * 90.0 + 5.0]).collect();
    let det = DetectionEvent::new(Timestamp(0), "cam0", Pose::identity("cam0", "target"), corners).unwrap();
    fs::write(d("det.jsonl"), format!("{}\n{}\n", det.to_json(), det.to_json())).unwrap();
    let (code, err) = ptk(&["coverage", "--detections", p(&d("det.jsonl")), "--out", p(&d("grid.json"))]);
    assert_eq!(code, 0, "{err}");
    let g = json(&d("grid.json"));
    assert_eq!(g["result"]["cam0"]["decisions"], serde_json::json!([true, false]));
    assert_eq!(g["result"]["cam0"]["grid"]["counts"][1][1], 16);
}

#[test]
fn usage_errors() {
    assert_eq!(ptk(&["nonsense"]).0, 1);
    assert_eq!(ptk(&["eval", "ate"]).0, 1);
    let (code, err) = ptk(&["eval", "ate", "--est", "/nonexistent.tum", "--ref", "/nonexistent.tum"]);
    assert_eq!(code, 2, "{err}");
}
