//! Synthetic payload simulator.
//!
//! Every degree of freedom is `offset + rate·t + Σ A·sin(2πf·t + φ)`, so
//! positions, velocities, accelerations and body rates are all available in
//! closed form. Attitude is `Rx(roll)·Ry(pitch)·Rz(yaw)`.

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{so3_exp, Pose, Timestamp};
use crate::series::{ImuSample, ImuSeries, PositionSeries};
use crate::trajectory::Trajectory;

pub const GRAVITY: f64 = 9.80665;

/// World gravity vector, +z up.
pub fn gravity_vector() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub freq_hz: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DofSignal {
    #[serde(default)]
    pub offset: f64,
    /// Constant rate term (units per second).
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub terms: Vec<Sinusoid>,
}

impl DofSignal {
    pub fn constant(offset: f64) -> Self {
        DofSignal { offset, ..Default::default() }
    }

    pub fn linear(rate: f64) -> Self {
        DofSignal { rate, ..Default::default() }
    }

    pub fn sine(amplitude: f64, freq_hz: f64, phase_rad: f64) -> Self {
        DofSignal { terms: vec![Sinusoid { amplitude, freq_hz, phase_rad }], ..Default::default() }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.offset
            + self.rate * t
            + self
                .terms
                .iter()
                .map(|s| s.amplitude * (std::f64::consts::TAU * s.freq_hz * t + s.phase_rad).sin())
                .sum::<f64>()
    }

    pub fn d1(&self, t: f64) -> f64 {
        self.rate
            + self
                .terms
                .iter()
                .map(|s| {
                    let w = std::f64::consts::TAU * s.freq_hz;
                    s.amplitude * w * (w * t + s.phase_rad).cos()
                })
                .sum::<f64>()
    }

    pub fn d2(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| {
                let w = std::f64::consts::TAU * s.freq_hz;
                -s.amplitude * w * w * (w * t + s.phase_rad).sin()
            })
            .sum()
    }

    fn is_finite(&self) -> bool {
        self.offset.is_finite()
            && self.rate.is_finite()
            && self
                .terms
                .iter()
                .all(|s| s.amplitude.is_finite() && s.freq_hz.is_finite() && s.phase_rad.is_finite())
    }
}

/// Closed-form 6-DOF body trajectory (world ← body).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTrajectory {
    /// x, y, z in meters.
    pub translation: [DofSignal; 3],
    /// roll, pitch, yaw in radians.
    pub rotation: [DofSignal; 3],
    pub duration_s: f64,
}

impl AnalyticTrajectory {
    pub fn stationary(duration_s: f64) -> Self {
        AnalyticTrajectory { duration_s, ..Default::default() }
    }

    /// Slow forward walk with gentle sway, similar to a legged robot carrying a payload.
    pub fn walking(duration_s: f64) -> Self {
        AnalyticTrajectory {
            translation: [
                DofSignal { offset: 0.0, rate: 0.4, terms: vec![Sinusoid { amplitude: 0.4, freq_hz: 0.07, phase_rad: 0.0 }] },
                DofSignal { offset: 1.0, rate: 0.0, terms: vec![
                    Sinusoid { amplitude: 1.2, freq_hz: 0.05, phase_rad: 0.3 },
                    Sinusoid { amplitude: 0.02, freq_hz: 1.1, phase_rad: 0.0 },
                ] },
                DofSignal { offset: 0.5, rate: 0.0, terms: vec![Sinusoid { amplitude: 0.03, freq_hz: 1.6, phase_rad: 0.5 }] },
            ],
            rotation: [
                DofSignal::sine(0.05, 0.55, 0.2),
                DofSignal::sine(0.06, 0.45, 1.0),
                DofSignal { offset: 0.2, rate: 0.0, terms: vec![Sinusoid { amplitude: 0.5, freq_hz: 0.06, phase_rad: 0.0 }] },
            ],
            duration_s,
        }
    }

    /// Strong multi-frequency rotation on every axis; used to excite time-offset estimation.
    pub fn rich_rotation(duration_s: f64) -> Self {
        let rot = |a: f64, phase: f64| DofSignal {
            offset: 0.0,
            rate: 0.0,
            terms: vec![
                Sinusoid { amplitude: 0.5 * a, freq_hz: 0.31, phase_rad: phase },
                Sinusoid { amplitude: 0.2 * a, freq_hz: 0.93, phase_rad: 2.0 * phase },
                Sinusoid { amplitude: 0.08 * a, freq_hz: 2.17, phase_rad: 0.5 + phase },
                Sinusoid { amplitude: 0.03 * a, freq_hz: 3.7, phase_rad: 1.5 * phase },
            ],
        };
        AnalyticTrajectory {
            translation: [DofSignal::sine(0.3, 0.2, 0.0), DofSignal::sine(0.2, 0.27, 1.0), DofSignal::sine(0.1, 0.4, 2.0)],
            rotation: [rot(1.0, 0.1), rot(0.8, 1.3), rot(1.2, 2.6)],
            duration_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Parameter(format!("duration must be > 0, got {}", self.duration_s)));
        }
        if !self.translation.iter().chain(self.rotation.iter()).all(DofSignal::is_finite) {
            return Err(Error::Parameter("non-finite trajectory parameter".into()));
        }
        Ok(())
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.translation[i].value(t))
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.translation[i].d1(t))
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.translation[i].d2(t))
    }

    fn angles(&self, t: f64) -> [f64; 3] {
        [self.rotation[0].value(t), self.rotation[1].value(t), self.rotation[2].value(t)]
    }

    pub fn rotation(&self, t: f64) -> UnitQuaternion<f64> {
        let [a, b, c] = self.angles(t);
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a)
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), b)
            * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c)
    }

    /// Angular velocity of the body expressed in the world frame.
    pub fn angular_velocity_world(&self, t: f64) -> Vector3<f64> {
        let [a, b, _] = self.angles(t);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a);
        let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), b);
        Vector3::x() * self.rotation[0].d1(t)
            + rx * Vector3::y() * self.rotation[1].d1(t)
            + (rx * ry) * Vector3::z() * self.rotation[2].d1(t)
    }

    /// Angular velocity expressed in the body frame (what a gyro measures).
    pub fn angular_velocity_body(&self, t: f64) -> Vector3<f64> {
        self.rotation(t).inverse() * self.angular_velocity_world(t)
    }

    /// Specific force in the body frame: `Rᵀ (a_world − g)`.
    pub fn specific_force(&self, t: f64) -> Vector3<f64> {
        self.rotation(t).inverse() * (self.acceleration(t) - gravity_vector())
    }

    pub fn isometry(&self, t: f64) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position(t)), self.rotation(t))
    }

    pub fn pose(&self, t: f64) -> Pose {
        Pose::new("world", "body", self.rotation(t), self.position(t))
    }
}

/// Nominal sample instants `k / rate` covering `[0, duration]`.
pub fn sample_times(duration_s: f64, rate_hz: f64) -> Result<Vec<Timestamp>> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::Parameter(format!("rate must be > 0, got {rate_hz}")));
    }
    let n = (duration_s * rate_hz + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| Timestamp((k as f64 * 1e9 / rate_hz).round() as i64)).collect())
}

/// Samples the closed-form trajectory at `sample_rate` Hz.
pub fn gen_trajectory(params: &AnalyticTrajectory, sample_rate: f64) -> Result<Trajectory> {
    params.validate()?;
    let times = sample_times(params.duration_s, sample_rate)?;
    Trajectory::from_isometries(
        "world",
        "body",
        times.into_iter().map(|t| (t, params.isometry(t.as_secs_f64()))),
    )
}

/// Continuous-time IMU noise parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseModel {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// Bias random-walk strength, rad/s per √s.
    pub gyro_bias_instability: f64,
    /// Bias random-walk strength, m/s² per √s.
    pub accel_bias_instability: f64,
    #[serde(default)]
    pub gyro_bias_init: [f64; 3],
    #[serde(default)]
    pub accel_bias_init: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

impl ImuNoiseModel {
    pub fn noiseless() -> Self {
        ImuNoiseModel {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias_instability: 0.0,
            accel_bias_instability: 0.0,
            gyro_bias_init: [0.0; 3],
            accel_bias_init: [0.0; 3],
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// White-noise-only gyro with the given per-sample standard deviation at `rate_hz`.
    pub fn gyro_white(sample_sigma: f64, rate_hz: f64, seed: u64) -> Self {
        ImuNoiseModel {
            gyro_noise_density: sample_sigma / rate_hz.sqrt(),
            seed,
            ..ImuNoiseModel::noiseless()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_instability,
            self.accel_bias_instability,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("noise densities must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Performance tiers. Bias-instability figures of the tactical and
/// industrial tiers are the HG4930 and ADIS16475-2 table values; white-noise
/// densities and the consumer bias figures are typical datasheet values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuGrade {
    Tactical,
    Industrial,
    Consumer,
}

const DEG: f64 = std::f64::consts::PI / 180.0;
const MILLI_G: f64 = 1e-3 * GRAVITY;

impl ImuGrade {
    pub fn noise_model(self, seed: u64) -> ImuNoiseModel {
        let (gd, ad, gbi, abi) = match self {
            // 0.04 deg/√h ARW, 0.03 m/s/√h VRW, 0.25 deg/h, 0.025 mg
            ImuGrade::Tactical => (0.04 * DEG / 60.0, 0.03 / 60.0, 0.25 * DEG / 3600.0, 0.025 * MILLI_G),
            // 0.003 deg/s/√Hz, 23 µg/√Hz, 2.5 deg/h, 0.0036 mg
            ImuGrade::Industrial => (0.003 * DEG, 23e-3 * MILLI_G, 2.5 * DEG / 3600.0, 0.0036 * MILLI_G),
            // 0.014 deg/s/√Hz, 175 µg/√Hz, 10 deg/h, 0.1 mg
            ImuGrade::Consumer => (0.014 * DEG, 175e-3 * MILLI_G, 10.0 * DEG / 3600.0, 0.1 * MILLI_G),
        };
        ImuNoiseModel {
            gyro_noise_density: gd,
            accel_noise_density: ad,
            gyro_bias_instability: gbi,
            accel_bias_instability: abi,
            gyro_bias_init: [0.0; 3],
            accel_bias_init: [0.0; 3],
            seed,
        }
    }

    pub fn all() -> [ImuGrade; 3] {
        [ImuGrade::Tactical, ImuGrade::Industrial, ImuGrade::Consumer]
    }
}

/// Mapping from true time to a sensor's clock.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset_ns: i64,
    pub drift_ppm: f64,
    #[serde(default)]
    pub jitter_ns: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ClockModel {
    pub fn ideal() -> Self {
        ClockModel::default()
    }

    pub fn offset_ms(ms: f64) -> Self {
        ClockModel { offset_ns: (ms * 1e6).round() as i64, ..Default::default() }
    }

    /// Jitter-free sensor time: `t + offset + drift_ppm·1e-6·t`.
    pub fn sensor_time(&self, t: Timestamp) -> Timestamp {
        let drift = (t.nanos() as f64 * self.drift_ppm / 1e6).round() as i64;
        Timestamp(t.nanos() + self.offset_ns + drift)
    }

    /// Stamps a sequence of true instants, adding seeded Gaussian jitter.
    /// Jittered stamps are kept strictly increasing.
    pub fn stamp_all(&self, times: &[Timestamp]) -> Result<Vec<Timestamp>> {
        if !(self.drift_ppm.is_finite() && self.jitter_ns.is_finite() && self.jitter_ns >= 0.0) {
            return Err(Error::Parameter("invalid clock model".into()));
        }
        let mut out: Vec<Timestamp> = times.iter().map(|&t| self.sensor_time(t)).collect();
        if self.jitter_ns > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let n = Normal::new(0.0, self.jitter_ns).expect("valid sigma");
            let mut prev: Option<i64> = None;
            for t in out.iter_mut() {
                let mut v = t.nanos() + n.sample(&mut rng).round() as i64;
                if let Some(p) = prev {
                    v = v.max(p + 1);
                }
                prev = Some(v);
                *t = Timestamp(v);
            }
        }
        Ok(out)
    }
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma"))
}

fn draw3(d: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    match d {
        Some(d) => Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng)),
        None => Vector3::zeros(),
    }
}

/// Simulates a body-mounted IMU at `rate` Hz.
///
/// gyro = ω_body + b_g + n_g, accel = Rᵀ(a − g) + b_a + n_a. Biases follow a
/// random walk with per-sample step `BI·√dt`; white noise has per-sample σ
/// `density·√rate`. Timestamps pass through `clock`.
pub fn simulate_imu(
    traj: &AnalyticTrajectory,
    noise: &ImuNoiseModel,
    clock: &ClockModel,
    rate: f64,
) -> Result<ImuSeries> {
    traj.validate()?;
    noise.validate()?;
    let times = sample_times(traj.duration_s, rate)?;
    let stamps = clock.stamp_all(&times)?;
    let dt = 1.0 / rate;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let n_g = normal(noise.gyro_noise_density * rate.sqrt());
    let n_a = normal(noise.accel_noise_density * rate.sqrt());
    let w_g = normal(noise.gyro_bias_instability * dt.sqrt());
    let w_a = normal(noise.accel_bias_instability * dt.sqrt());
    let mut b_g = Vector3::from(noise.gyro_bias_init);
    let mut b_a = Vector3::from(noise.accel_bias_init);
    let mut samples = Vec::with_capacity(times.len());
    for (t, stamp) in times.iter().zip(stamps) {
        let ts = t.as_secs_f64();
        let gyro = traj.angular_velocity_body(ts) + b_g + draw3(&n_g, &mut rng);
        let accel = traj.specific_force(ts) + b_a + draw3(&n_a, &mut rng);
        samples.push(ImuSample { t: stamp, gyro, accel });
        b_g += draw3(&w_g, &mut rng);
        b_a += draw3(&w_a, &mut rng);
    }
    ImuSeries::new("imu", rate, samples)
}

/// Sorts and merges overlapping `(start, end)` intervals, warning on overlap.
pub fn merge_intervals(intervals: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v = intervals.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => {
                log::warn!("overlapping dropout intervals merged: ({}, {}) and ({s}, {e})", last.0, last.1);
                last.1 = last.1.max(e);
            }
            _ => out.push((s, e)),
        }
    }
    out
}

/// Simulates total-station tracking of a prism rigidly attached to the body.
///
/// Samples with `start <= t < end` for any dropout interval are omitted.
pub fn simulate_tps(
    traj: &AnalyticTrajectory,
    prism_in_body: &Vector3<f64>,
    rate: f64,
    noise_sigma: f64,
    dropouts: &[(f64, f64)],
    seed: u64,
) -> Result<PositionSeries> {
    traj.validate()?;
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::Parameter(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    if rate > 20.0 {
        log::warn!("TPS rate {rate} Hz exceeds the usual 20 Hz");
    }
    for &(s, e) in dropouts {
        if !(s < e && s >= 0.0 && e <= traj.duration_s) {
            return Err(Error::Parameter(format!("dropout ({s}, {e}) outside [0, {}]", traj.duration_s)));
        }
    }
    let dropouts = merge_intervals(dropouts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = normal(noise_sigma);
    let mut samples = Vec::new();
    for t in sample_times(traj.duration_s, rate)? {
        let ts = t.as_secs_f64();
        if dropouts.iter().any(|&(s, e)| ts >= s && ts < e) {
            continue;
        }
        let p = traj.isometry(ts) * nalgebra::Point3::from(*prism_in_body);
        samples.push((t, p.coords + draw3(&n, &mut rng)));
    }
    PositionSeries::new("world", noise_sigma, samples)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionNoise {
    pub translation_sigma_m: f64,
    pub rotation_sigma_rad: f64,
    pub seed: u64,
}

/// Camera-frame target poses `T_cam←target(t) = T_world←cam(t)⁻¹ ∘ T_world←target`.
/// The camera frame coincides with the body frame of `traj`.
pub fn simulate_detections(
    traj: &AnalyticTrajectory,
    target_pose_world: &Pose,
    times: &[Timestamp],
    noise: Option<DetectionNoise>,
) -> Result<Vec<(Timestamp, Pose)>> {
    traj.validate()?;
    let target = target_pose_world.with_frames("world", "target");
    let mut rng = noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let ts = t.as_secs_f64();
        if ts < 0.0 || ts > traj.duration_s {
            return Err(Error::Range(format!("detection time {t} outside trajectory")));
        }
        let cam = traj.pose(ts).with_frames("world", "camera");
        let mut det = cam.inverse().compose(&target)?;
        if let (Some(n), Some(rng)) = (noise, rng.as_mut()) {
            let dt = draw3(&normal(n.translation_sigma_m), rng);
            let dr = draw3(&normal(n.rotation_sigma_rad), rng);
            det = Pose::new("camera", "target", det.rotation() * so3_exp(&dr), det.translation() + dt);
        }
        out.push((t, det));
    }
    Ok(out)
}

/// Rotation-matrix time derivative by central differences; test oracle helper.
#[doc(hidden)]
pub fn numeric_body_rate(traj: &AnalyticTrajectory, t: f64, h: f64) -> Vector3<f64> {
    let r0: Matrix3<f64> = traj.rotation(t - h).to_rotation_matrix().into_inner();
    let r1: Matrix3<f64> = traj.rotation(t + h).to_rotation_matrix().into_inner();
    let r: Matrix3<f64> = traj.rotation(t).to_rotation_matrix().into_inner();
    let w = r.transpose() * (r1 - r0) / (2.0 * h);
    Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5
}
