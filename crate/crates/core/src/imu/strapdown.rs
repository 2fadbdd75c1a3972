//! Strapdown inertial dead reckoning.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{so3_exp, Pose, Timestamp};
use crate::imu::preint::ImuBias;
use crate::series::ImuSeries;
use crate::trajectory::Trajectory;

/// Navigation state; `pose` maps body coordinates into the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    pub t: Timestamp,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
}

#[derive(Serialize, Deserialize)]
struct NavStateJson {
    t_ns: i64,
    position: [f64; 3],
    quaternion_xyzw: [f64; 4],
    velocity: [f64; 3],
    #[serde(default)]
    gyro_bias: [f64; 3],
    #[serde(default)]
    accel_bias: [f64; 3],
}

impl NavState {
    pub fn new(
        t: Timestamp,
        rotation: UnitQuaternion<f64>,
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        bias: ImuBias,
    ) -> Self {
        NavState { t, pose: Pose::new("world", "body", rotation, position), velocity, bias }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        self.pose.rotation()
    }

    pub fn position(&self) -> &Vector3<f64> {
        self.pose.translation()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.rotation().quaternion();
        let finite = q.coords.iter().chain(self.position().iter()).chain(self.velocity.iter())
            .chain(self.bias.gyro.iter())
            .chain(self.bias.accel.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Data("non-finite navigation state".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: NavStateJson = serde_json::from_str(s)?;
        let [x, y, z, w] = j.quaternion_xyzw;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("quaternion norm {} is not 1", q.norm())));
        }
        let st = NavState::new(
            Timestamp(j.t_ns),
            UnitQuaternion::new_normalize(q),
            j.position.into(),
            j.velocity.into(),
            ImuBias { gyro: j.gyro_bias.into(), accel: j.accel_bias.into() },
        );
        st.validate()?;
        Ok(st)
    }

    pub fn to_json(&self) -> String {
        let j = NavStateJson {
            t_ns: self.t.nanos(),
            position: (*self.position()).into(),
            quaternion_xyzw: self.pose.quaternion_xyzw(),
            velocity: self.velocity.into(),
            gyro_bias: self.bias.gyro.into(),
            accel_bias: self.bias.accel.into(),
        };
        serde_json::to_string_pretty(&j).expect("plain data serializes")
    }
}

/// Integrates `imu` from `init` with a midpoint scheme:
/// R ← R·Exp(ω̄·dt), a = R·(f − b_a) + g averaged over the step ends,
/// p ← p + v·dt + ½·ā·dt², v ← v + ā·dt. Biases stay fixed at `init.bias`.
///
/// `init.t` must lie within one sample period of the first sample; the state
/// is taken to hold at that first sample. Returns one pose per IMU sample.
pub fn dead_reckon(imu: &ImuSeries, init: &NavState, gravity: &Vector3<f64>) -> Result<Trajectory> {
    init.validate()?;
    let s = imu.samples();
    let first = s.first().ok_or_else(|| Error::Data("empty IMU series".into()))?;
    let period_ns = 1e9 / imu.rate_hz;
    if ((init.t - first.t) as f64).abs() > period_ns * (1.0 + 1e-6) {
        return Err(Error::Data(format!(
            "initial state at {} is not within one sample of IMU start {}",
            init.t, first.t
        )));
    }
    let b = init.bias;
    let mut r = *init.rotation();
    let mut p = *init.position();
    let mut v = init.velocity;
    let mut out = Vec::with_capacity(s.len());
    out.push((first.t, Pose::new("world", "body", r, p)));
    for w in s.windows(2) {
        let dt = w[1].t.secs_since(w[0].t);
        let a0 = r * (w[0].accel - b.accel) + gravity;
        let r1 = r * so3_exp(&((0.5 * (w[0].gyro + w[1].gyro) - b.gyro) * dt));
        let a1 = r1 * (w[1].accel - b.accel) + gravity;
        let am = 0.5 * (a0 + a1);
        p += v * dt + 0.5 * am * dt * dt;
        v += am * dt;
        r = r1;
        out.push((w[1].t, Pose::new("world", "body", r, p)));
    }
    Trajectory::new("world", "body", out)
}
