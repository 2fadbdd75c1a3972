//! Browser demo: three interactive operations exported through
//! wasm-bindgen. Each returns a JSON string that the page renders.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use payload_toolkit::imu::{allan_deviation, dead_reckon, fit_noise_params, log_spaced_taus, FitConfig, ImuBias, NavState};
use payload_toolkit::series::Channel;
use payload_toolkit::synth::{gravity_vector, simulate_imu, AnalyticTrajectory, ClockModel, ImuGrade, ImuNoiseModel};
use payload_toolkit::timesync::{sync_error_models, RollingShutterModel, SyncMotion};
use payload_toolkit::Timestamp;

#[derive(Serialize)]
pub struct AllanResult {
    pub tau_s: Vec<f64>,
    pub adev: Vec<f64>,
    pub white_noise_density: f64,
    pub fit_slope: f64,
    pub bias_instability: f64,
}

#[derive(Serialize)]
pub struct SyncResult {
    pub linear_error_m: f64,
    pub angular_error_m: f64,
    pub line_time_ms: f64,
    pub line_time_truncated_ms: f64,
}

#[derive(Serialize)]
pub struct DriftSeries {
    pub grade: String,
    pub t_s: Vec<f64>,
    pub error_m: Vec<f64>,
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

/// Allan deviation of a simulated stationary gyro with the given white-noise
/// density (rad/s/√Hz).
pub fn allan_curve(density: f64, rate_hz: f64, duration_s: f64, seed: u64) -> Result<AllanResult, String> {
    if !(density > 0.0 && rate_hz > 0.0 && duration_s > 0.0) {
        return Err("density, rate and duration must be positive".into());
    }
    let noise = ImuNoiseModel::gyro_white(density * rate_hz.sqrt(), rate_hz, seed);
    let imu = simulate_imu(&AnalyticTrajectory::stationary(duration_s), &noise, &ClockModel::ideal(), rate_hz).map_err(|e| e.to_string())?;
    let x = imu.channel(Channel::GyroX);
    let curve = allan_deviation("gyro_x", &x, rate_hz, &log_spaced_taus(x.len(), rate_hz, 10)).map_err(|e| e.to_string())?;
    let fit = fit_noise_params(&curve, &FitConfig::default()).map_err(|e| e.to_string())?;
    Ok(AllanResult {
        tau_s: curve.taus(),
        adev: curve.adevs(),
        white_noise_density: fit.white_noise_density,
        fit_slope: fit.fit_slope,
        bias_instability: fit.bias_instability,
    })
}

/// Position error from a timestamp error, for linear and angular motion,
/// plus the rolling-shutter readout time of one image line.
#[allow(clippy::too_many_arguments)]
pub fn sync_error(
    dt_s: f64,
    v_m_s: f64,
    r_m: f64,
    omega_deg_s: f64,
    fps: f64,
    line_slots: u32,
    image_lines: u32,
    line: u32,
    resolution_s: f64,
) -> Result<SyncResult, String> {
    let e = |m| sync_error_models(m, dt_s).map_err(|e| e.to_string());
    let rs = RollingShutterModel::new(fps, line_slots, image_lines, 0.0).map_err(|e| e.to_string())?;
    Ok(SyncResult {
        linear_error_m: e(SyncMotion::Linear { v: v_m_s })?,
        angular_error_m: e(SyncMotion::Angular { r: r_m, omega_deg_s })?,
        line_time_ms: rs.line_time(line).map_err(|e| e.to_string())? * 1e3,
        line_time_truncated_ms: rs.line_time_truncated(line, resolution_s).map_err(|e| e.to_string())? * 1e3,
    })
}

/// Dead-reckoning position error over a walking trajectory for each IMU
/// grade, sampled every 0.1 s.
pub fn deadreckon_drift(duration_s: f64, seed: u64) -> Result<Vec<DriftSeries>, String> {
    if !(duration_s > 0.0 && duration_s <= 120.0) {
        return Err("duration must be in (0, 120] s".into());
    }
    let traj = AnalyticTrajectory::walking(duration_s);
    let init = NavState::new(Timestamp::ZERO, traj.rotation(0.0), traj.position(0.0), traj.velocity(0.0), ImuBias::zero());
    ImuGrade::all()
        .into_iter()
        .map(|grade| {
            let imu = simulate_imu(&traj, &grade.noise_model(seed), &ClockModel::ideal(), 200.0).map_err(|e| e.to_string())?;
            let out = dead_reckon(&imu, &init, &gravity_vector()).map_err(|e| e.to_string())?;
            let (mut t_s, mut error_m) = (Vec::new(), Vec::new());
            for (k, (t, p)) in out.iter().enumerate() {
                if k % 20 == 0 {
                    let s = t.as_secs_f64();
                    t_s.push(s);
                    error_m.push((p.translation() - traj.position(s)).norm());
                }
            }
            Ok(DriftSeries { grade: format!("{grade:?}").to_lowercase(), t_s, error_m })
        })
        .collect()
}

#[wasm_bindgen(js_name = allanCurve)]
pub fn allan_curve_js(density: f64, rate_hz: f64, duration_s: f64, seed: u32) -> Result<String, JsValue> {
    to_json(allan_curve(density, rate_hz, duration_s, seed as u64))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = syncError)]
pub fn sync_error_js(
    dt_s: f64,
    v_m_s: f64,
    r_m: f64,
    omega_deg_s: f64,
    fps: f64,
    line_slots: u32,
    image_lines: u32,
    line: u32,
    resolution_s: f64,
) -> Result<String, JsValue> {
    to_json(sync_error(dt_s, v_m_s, r_m, omega_deg_s, fps, line_slots, image_lines, line, resolution_s))
}

#[wasm_bindgen(js_name = deadreckonDrift)]
pub fn deadreckon_drift_js(duration_s: f64, seed: u32) -> Result<String, JsValue> {
    to_json(deadreckon_drift(duration_s, seed as u64))
}
