//! Gravity-free IMU preintegration between two instants.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{skew, so3_exp, Timestamp};
use crate::series::{ImuSample, ImuSeries};

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Preintegration longer than this is flagged (drift dominates).
pub const LONG_SEGMENT_S: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn zero() -> Self {
        ImuBias::default()
    }
}

/// White-noise densities used for covariance propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseDensity {
    /// rad/s/√Hz
    pub gyro: f64,
    /// m/s²/√Hz
    pub accel: f64,
}

/// Relative motion increments expressed in the body frame at the segment
/// start. Covariance is over `[δθ, δv, δp]` with the rotation error applied
/// on the right (ΔR_meas = ΔR·Exp(δθ)).
#[derive(Clone, Debug, PartialEq)]
pub struct Preintegrated {
    pub delta_r: UnitQuaternion<f64>,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub duration_s: f64,
    pub cov: Matrix9,
}

impl Preintegrated {
    pub fn identity() -> Self {
        Preintegrated {
            delta_r: UnitQuaternion::identity(),
            delta_v: Vector3::zeros(),
            delta_p: Vector3::zeros(),
            duration_s: 0.0,
            cov: Matrix9::zeros(),
        }
    }

    /// Increments over `[t0, t2]` from those over `[t0, t1]` and `[t1, t2]`.
    pub fn compose(&self, next: &Preintegrated) -> Preintegrated {
        let r1 = self.delta_r.to_rotation_matrix().into_inner();
        let r2 = next.delta_r.to_rotation_matrix().into_inner();
        let mut a1 = Matrix9::identity();
        a1.fixed_view_mut::<3, 3>(0, 0).copy_from(&r2.transpose());
        a1.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r1 * skew(&next.delta_v)));
        a1.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r1 * skew(&next.delta_p)));
        a1.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * next.duration_s));
        let mut a2 = Matrix9::identity();
        a2.fixed_view_mut::<3, 3>(3, 3).copy_from(&r1);
        a2.fixed_view_mut::<3, 3>(6, 6).copy_from(&r1);
        Preintegrated {
            delta_r: self.delta_r * next.delta_r,
            delta_v: self.delta_v + self.delta_r * next.delta_v,
            delta_p: self.delta_p + self.delta_v * next.duration_s + self.delta_r * next.delta_p,
            duration_s: self.duration_s + next.duration_s,
            cov: a1 * self.cov * a1.transpose() + a2 * next.cov * a2.transpose(),
        }
    }

    /// Like [`compose`](Self::compose) but leaves the covariance untouched.
    fn compose_mean(&mut self, next: &Preintegrated) {
        self.delta_p += self.delta_v * next.duration_s + self.delta_r * next.delta_p;
        self.delta_v += self.delta_r * next.delta_v;
        self.delta_r *= next.delta_r;
        self.duration_s += next.duration_s;
    }

    /// Predicted end state `(R_j, p_j, v_j)` from world-frame start state.
    pub fn predict(
        &self,
        r_i: &UnitQuaternion<f64>,
        p_i: &Vector3<f64>,
        v_i: &Vector3<f64>,
        gravity: &Vector3<f64>,
    ) -> (UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>) {
        let dt = self.duration_s;
        (
            r_i * self.delta_r,
            p_i + v_i * dt + 0.5 * gravity * dt * dt + r_i * self.delta_p,
            v_i + gravity * dt + r_i * self.delta_v,
        )
    }
}

/// One midpoint step between consecutive samples.
fn step(a: &ImuSample, b: &ImuSample, bias: &ImuBias, noise: Option<&NoiseDensity>) -> Preintegrated {
    let dt = b.t.secs_since(a.t);
    let w = 0.5 * (a.gyro + b.gyro) - bias.gyro;
    let dr = so3_exp(&(w * dt));
    let dv = 0.5 * ((a.accel - bias.accel) + dr * (b.accel - bias.accel)) * dt;
    let mut cov = Matrix9::zeros();
    if let Some(n) = noise {
        let (qg, qa) = (n.gyro * n.gyro * dt, n.accel * n.accel * dt);
        let i3 = Matrix3::identity();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i3 * qg));
        cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i3 * qa));
        cov.fixed_view_mut::<3, 3>(6, 6).copy_from(&(i3 * (0.25 * qa * dt * dt)));
        cov.fixed_view_mut::<3, 3>(3, 6).copy_from(&(i3 * (0.5 * qa * dt)));
        cov.fixed_view_mut::<3, 3>(6, 3).copy_from(&(i3 * (0.5 * qa * dt)));
    }
    Preintegrated { delta_r: dr, delta_v: dv, delta_p: 0.5 * dv * dt, duration_s: dt, cov }
}

/// Midpoint preintegration of bias-corrected rates over consecutive samples.
/// Gravity is not included.
pub fn preintegrate(samples: &[ImuSample], bias: &ImuBias) -> Result<Preintegrated> {
    preintegrate_with_noise(samples, bias, None)
}

pub fn preintegrate_with_noise(
    samples: &[ImuSample],
    bias: &ImuBias,
    noise: Option<&NoiseDensity>,
) -> Result<Preintegrated> {
    if samples.is_empty() {
        return Err(Error::Data("empty IMU segment".into()));
    }
    if samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Data("IMU segment timestamps not increasing".into()));
    }
    let mut acc = Preintegrated::identity();
    for w in samples.windows(2) {
        let st = step(&w[0], &w[1], bias, noise);
        if noise.is_some() {
            acc = acc.compose(&st);
        } else {
            acc.compose_mean(&st);
        }
    }
    if acc.duration_s > LONG_SEGMENT_S {
        log::warn!("preintegrating {:.1} s of IMU data; expect drift", acc.duration_s);
    }
    Ok(acc)
}

/// Samples of `series` covering `[t0, t1]`, with linearly interpolated
/// samples inserted at both ends.
pub fn segment_samples(series: &ImuSeries, t0: Timestamp, t1: Timestamp) -> Result<Vec<ImuSample>> {
    let (start, end) = match (series.start(), series.end()) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(Error::Data("empty IMU series".into())),
    };
    if t1 < t0 || t0 < start || t1 > end {
        return Err(Error::Range(format!("segment [{t0}, {t1}] outside IMU data [{start}, {end}]")));
    }
    let mut out = vec![series.sample_at(t0)];
    out.extend(series.samples().iter().filter(|s| s.t > t0 && s.t < t1).copied());
    if t1 > t0 {
        out.push(series.sample_at(t1));
    }
    Ok(out)
}

pub fn preintegrate_between(
    series: &ImuSeries,
    t0: Timestamp,
    t1: Timestamp,
    bias: &ImuBias,
    noise: Option<&NoiseDensity>,
) -> Result<Preintegrated> {
    preintegrate_with_noise(&segment_samples(series, t0, t1)?, bias, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gravity_vector, simulate_imu, AnalyticTrajectory, ClockModel, ImuNoiseModel};
    use approx::assert_relative_eq;

    fn constant(rate: f64, secs: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Vec<ImuSample> {
        (0..=(secs * rate).round() as i64)
            .map(|k| ImuSample { t: Timestamp::from_secs_f64(k as f64 / rate), gyro, accel })
            .collect()
    }

    #[test]
    fn zero_rates() {
        let p = preintegrate(&constant(100.0, 1.0, Vector3::zeros(), Vector3::zeros()), &ImuBias::zero()).unwrap();
        assert_eq!(p.delta_r, UnitQuaternion::identity());
        assert_eq!(p.delta_v, Vector3::zeros());
        assert_eq!(p.delta_p, Vector3::zeros());
        assert_relative_eq!(p.duration_s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_yaw_rate() {
        let w = Vector3::new(0.0, 0.0, 90f64.to_radians());
        let p = preintegrate(&constant(200.0, 1.0, w, Vector3::zeros()), &ImuBias::zero()).unwrap();
        let want = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 90f64.to_radians());
        assert!(p.delta_r.angle_to(&want) < 1e-6);
    }

    #[test]
    fn constant_force_double_integral() {
        let p = preintegrate(&constant(100.0, 2.0, Vector3::zeros(), Vector3::x()), &ImuBias::zero()).unwrap();
        assert_relative_eq!(p.delta_v, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(p.delta_p, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn bias_is_subtracted() {
        let bias = ImuBias { gyro: Vector3::new(0.1, 0.0, 0.0), accel: Vector3::new(0.0, 0.2, 0.0) };
        let p = preintegrate(&constant(100.0, 1.0, bias.gyro, bias.accel), &bias).unwrap();
        assert!(p.delta_r.angle() < 1e-15 && p.delta_v.norm() < 1e-15);
    }

    #[test]
    fn composition_matches_whole_segment() {
        let traj = AnalyticTrajectory::walking(4.0);
        let imu = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 200.0).unwrap();
        let noise = NoiseDensity { gyro: 1e-3, accel: 1e-2 };
        let s = imu.samples();
        let n = s.len() / 3;
        let bias = ImuBias { gyro: Vector3::new(1e-3, 0.0, -2e-3), accel: Vector3::new(0.01, 0.02, 0.0) };
        let whole = preintegrate_with_noise(s, &bias, Some(&noise)).unwrap();
        let a = preintegrate_with_noise(&s[..=n], &bias, Some(&noise)).unwrap();
        let b = preintegrate_with_noise(&s[n..], &bias, Some(&noise)).unwrap();
        let c = a.compose(&b);
        let tol = 1e-8 * whole.duration_s;
        assert!(c.delta_r.angle_to(&whole.delta_r) < tol);
        assert!((c.delta_v - whole.delta_v).norm() < tol);
        assert!((c.delta_p - whole.delta_p).norm() < tol);
        assert!((c.cov - whole.cov).norm() < tol * whole.cov.norm());
    }

    #[test]
    fn prediction_reproduces_analytic_motion() {
        let traj = AnalyticTrajectory::walking(3.0);
        let imu = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 400.0).unwrap();
        let t0 = Timestamp::from_secs_f64(0.5);
        let t1 = Timestamp::from_secs_f64(1.2345);
        let p = preintegrate_between(&imu, t0, t1, &ImuBias::zero(), None).unwrap();
        let (r, pos, v) = p.predict(&traj.rotation(0.5), &traj.position(0.5), &traj.velocity(0.5), &gravity_vector());
        assert!(r.angle_to(&traj.rotation(1.2345)) < 1e-5);
        assert!((pos - traj.position(1.2345)).norm() < 1e-4);
        assert!((v - traj.velocity(1.2345)).norm() < 1e-4);
    }

    #[test]
    fn covariance_grows_with_time() {
        let s = constant(100.0, 2.0, Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, 9.8));
        let noise = NoiseDensity { gyro: 1e-3, accel: 1e-2 };
        let a = preintegrate_with_noise(&s[..100], &ImuBias::zero(), Some(&noise)).unwrap();
        let b = preintegrate_with_noise(&s, &ImuBias::zero(), Some(&noise)).unwrap();
        assert!(b.cov.trace() > a.cov.trace());
        // rotation block is σ²·t
        assert_relative_eq!(b.cov[(2, 2)], 1e-6 * b.duration_s, max_relative = 1e-9);
    }

    #[test]
    fn rejects_bad_segments() {
        assert!(preintegrate(&[], &ImuBias::zero()).is_err());
        let mut s = constant(10.0, 1.0, Vector3::zeros(), Vector3::zeros());
        s.swap(2, 3);
        assert!(preintegrate(&s, &ImuBias::zero()).is_err());
    }
}
