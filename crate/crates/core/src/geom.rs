//! Rigid-body geometry and time primitives shared by every other module.
//!
//! Rotations are Hamilton unit quaternions stored with a nonnegative scalar
//! part. A [`Pose`] with `frame_from = A` and `frame_to = B` is the pose of
//! frame `B` expressed in frame `A`: it maps `B` coordinates into `A`
//! coordinates, `p_A = R * p_B + t`.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::Arc;

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NANOS_PER_SEC: i64 = 1_000_000_000;

/// Integer nanoseconds since an arbitrary epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_nanos(ns: i64) -> Self {
        Timestamp(ns)
    }

    /// Rounds to the nearest nanosecond.
    pub fn from_secs_f64(s: f64) -> Self {
        Timestamp((s * 1e9).round() as i64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Timestamp((ms * 1e6).round() as i64)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        // split keeps full precision for large epochs
        let s = self.0.div_euclid(NANOS_PER_SEC);
        let ns = self.0.rem_euclid(NANOS_PER_SEC);
        s as f64 + ns as f64 * 1e-9
    }

    /// Seconds elapsed from `earlier` to `self`.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 * 1e-9
    }

    pub fn offset_secs(self, s: f64) -> Timestamp {
        Timestamp(self.0 + (s * 1e9).round() as i64)
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;
    fn add(self, ns: i64) -> Timestamp {
        Timestamp(self.0 + ns)
    }
}

impl Sub for Timestamp {
    type Output = i64;
    fn sub(self, rhs: Timestamp) -> i64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:09}", a / 1_000_000_000, a % 1_000_000_000)
    }
}

/// Cheaply clonable frame identifier.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(Arc<str>);

impl FrameId {
    pub fn new(name: &str) -> Self {
        FrameId(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FrameId {
    fn from(s: &str) -> Self {
        FrameId::new(s)
    }
}

impl Serialize for FrameId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for FrameId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(FrameId::new(&s))
    }
}

/// Flips the quaternion so its scalar part is nonnegative and renormalizes.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = q.into_inner();
    let q = if q.w < 0.0 { -q } else { q };
    UnitQuaternion::new_normalize(q)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential of a rotation vector.
pub fn so3_exp(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

/// SO(3) logarithm, returning the rotation vector of the shortest arc.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    canonical(*q).scaled_axis()
}

/// Shortest-arc spherical interpolation, `s` in `[0, 1]`.
///
/// Antipodal inputs are resolved by flipping `b` to the hemisphere of `a`;
/// exactly opposite rotations (180 degrees apart) pick whatever axis the
/// flipped quaternion difference yields.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.into_inner();
    let mut qb = b.into_inner();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        return canonical(UnitQuaternion::new_normalize(qa * (1.0 - s) + qb * s));
    }
    let theta = dot.min(1.0).acos();
    let sin_t = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin_t;
    let wb = (s * theta).sin() / sin_t;
    canonical(UnitQuaternion::new_normalize(qa * wa + qb * wb))
}

/// Rigid transform between two named frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    frame_from: FrameId,
    frame_to: FrameId,
}

impl Pose {
    pub fn new(
        frame_from: impl Into<FrameId>,
        frame_to: impl Into<FrameId>,
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        Pose {
            rotation: canonical(rotation),
            translation,
            frame_from: frame_from.into(),
            frame_to: frame_to.into(),
        }
    }

    pub fn identity(frame_from: impl Into<FrameId>, frame_to: impl Into<FrameId>) -> Self {
        Pose::new(frame_from, frame_to, UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_isometry(
        frame_from: impl Into<FrameId>,
        frame_to: impl Into<FrameId>,
        iso: &Isometry3<f64>,
    ) -> Self {
        Pose::new(frame_from, frame_to, iso.rotation, iso.translation.vector)
    }

    /// Builds a pose from `[x, y, z]` and `[qx, qy, qz, qw]`, normalizing the quaternion.
    pub fn from_arrays(
        frame_from: impl Into<FrameId>,
        frame_to: impl Into<FrameId>,
        translation: [f64; 3],
        quaternion_xyzw: [f64; 4],
    ) -> Result<Self> {
        let [x, y, z, w] = quaternion_xyzw;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "invalid pose: t={translation:?} q={quaternion_xyzw:?}"
            )));
        }
        Ok(Pose::new(
            frame_from,
            frame_to,
            UnitQuaternion::new_normalize(q),
            Vector3::from(translation),
        ))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn frame_from(&self) -> &FrameId {
        &self.frame_from
    }

    pub fn frame_to(&self) -> &FrameId {
        &self.frame_to
    }

    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// Maps a point from `frame_to` coordinates into `frame_from` coordinates.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`; requires `self.frame_to == other.frame_from`.
    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        if self.frame_to != other.frame_from {
            return Err(Error::Frame {
                expected: self.frame_to.to_string(),
                found: other.frame_from.to_string(),
            });
        }
        Ok(Pose::new(
            self.frame_from.clone(),
            other.frame_to.clone(),
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        ))
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(
            self.frame_to.clone(),
            self.frame_from.clone(),
            r_inv,
            -(r_inv * self.translation),
        )
    }

    /// Same transform, relabeled frames.
    pub fn with_frames(&self, frame_from: impl Into<FrameId>, frame_to: impl Into<FrameId>) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation,
            frame_from: frame_from.into(),
            frame_to: frame_to.into(),
        }
    }

    /// Rotation angle in radians between this pose's rotation and `other`'s.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// Free-function form of [`Pose::compose`].
pub fn se3_compose(a: &Pose, b: &Pose) -> Result<Pose> {
    a.compose(b)
}

pub fn se3_inverse(a: &Pose) -> Pose {
    a.inverse()
}

/// A calibrated transform between two sensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrinsic {
    pub pose: Pose,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct ExtrinsicJson {
    frame_from: String,
    frame_to: String,
    translation_m: [f64; 3],
    quaternion_xyzw: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl Extrinsic {
    pub fn new(pose: Pose) -> Self {
        let label = format!("{}->{}", pose.frame_from(), pose.frame_to());
        Extrinsic { pose, label }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ExtrinsicJson = serde_json::from_str(s)?;
        let pose = Pose::from_arrays(
            j.frame_from.as_str(),
            j.frame_to.as_str(),
            j.translation_m,
            j.quaternion_xyzw,
        )?;
        let mut ext = Extrinsic::new(pose);
        if let Some(l) = j.label {
            ext.label = l;
        }
        Ok(ext)
    }

    pub fn to_json(&self) -> String {
        let j = ExtrinsicJson {
            frame_from: self.pose.frame_from().to_string(),
            frame_to: self.pose.frame_to().to_string(),
            translation_m: (*self.pose.translation()).into(),
            quaternion_xyzw: self.pose.quaternion_xyzw(),
            label: Some(self.label.clone()),
        };
        serde_json::to_string_pretty(&j).expect("extrinsic serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rz(a: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a)
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-10.0..10.0f64),
            prop::array::uniform4(-1.0..1.0f64),
        )
            .prop_filter("nonzero quaternion", |(_, q)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(t, q)| Pose::from_arrays("a", "b", t, q).unwrap())
    }

    fn assert_identity(p: &Pose, tol: f64) {
        assert!(p.translation().norm() <= tol, "{:?}", p.translation());
        assert!(p.rotation().angle() <= tol, "{}", p.rotation().angle());
    }

    #[test]
    fn identity_compose() {
        let i = Pose::identity("a", "a");
        let c = i.compose(&i).unwrap();
        assert_identity(&c, 0.0);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let a = Pose::new("a", "b", rz(FRAC_PI_2), Vector3::zeros());
        let b = Pose::new("b", "c", rz(FRAC_PI_2), Vector3::zeros());
        let c = a.compose(&b).unwrap();
        assert_eq!(c.frame_from().as_str(), "a");
        assert_eq!(c.frame_to().as_str(), "c");
        assert_relative_eq!(c.rotation().angle(), std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(c.rotation().axis().unwrap().z.abs(), 1.0, epsilon = 1e-12);
        assert_eq!(c.translation(), &Vector3::zeros());
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let a = Pose::identity("a", "b");
        let b = Pose::identity("c", "d");
        assert!(matches!(a.compose(&b), Err(Error::Frame { .. })));
    }

    #[test]
    fn inverse_of_pure_translation() {
        let p = Pose::new("a", "b", UnitQuaternion::identity(), Vector3::new(1.0, 2.0, 3.0));
        let inv = p.inverse();
        assert_eq!(inv.translation(), &Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(inv.frame_from().as_str(), "b");
        assert_identity(&se3_inverse(&Pose::identity("a", "a")), 0.0);
    }

    #[test]
    fn canonical_scalar_is_nonnegative() {
        let p = Pose::from_arrays("a", "b", [0.0; 3], [0.0, 0.0, 0.6, -0.8]).unwrap();
        assert!(p.rotation().w >= 0.0);
        assert_relative_eq!(p.quaternion_xyzw()[2], -0.6, epsilon = 1e-15);
    }

    #[test]
    fn slerp_midpoint_of_quarter_turn() {
        let q = slerp(&UnitQuaternion::identity(), &rz(FRAC_PI_2), 0.5);
        assert!(q.angle_to(&rz(FRAC_PI_2 / 2.0)) < 1e-9);
    }

    #[test]
    fn slerp_takes_the_short_way_around() {
        // the same rotations with opposite quaternion signs
        let a = UnitQuaternion::new_unchecked(-rz(0.1).into_inner());
        let q = slerp(&a, &rz(0.3), 0.5);
        assert!(q.angle_to(&rz(0.2)) < 1e-12);
    }

    #[test]
    fn extrinsic_json_round_trip() {
        let p = Pose::from_arrays("cam", "imu", [0.1, -0.2, 0.3], [0.1, 0.2, 0.3, 0.9]).unwrap();
        let e = Extrinsic::new(p);
        let back = Extrinsic::from_json(&e.to_json()).unwrap();
        assert_eq!(back.label, "cam->imu");
        assert!((back.pose.translation() - e.pose.translation()).norm() < 1e-15);
        assert!(back.pose.angle_to(&e.pose) < 1e-12);
    }

    #[test]
    fn timestamp_display_is_exact() {
        assert_eq!(Timestamp(1_700_000_000_123_456_789).to_string(), "1700000000.123456789");
        assert_eq!(Timestamp(-1_500_000_000).to_string(), "-1.500000000");
        assert_eq!(Timestamp::from_secs_f64(600.03).nanos(), 600_030_000_000);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn compose_with_inverse_is_identity(p in pose_strategy()) {
            let c = p.compose(&p.inverse()).unwrap();
            prop_assert!(c.translation().norm() < 1e-9);
            prop_assert!(c.rotation().angle() < 1e-9);
            prop_assert!((c.rotation().norm() - 1.0).abs() < 1e-9);
            let c2 = p.inverse().compose(&p).unwrap();
            prop_assert!(c2.translation().norm() < 1e-9);
        }

        #[test]
        fn double_inverse_round_trips(p in pose_strategy()) {
            let pp = p.inverse().inverse();
            prop_assert!((pp.translation() - p.translation()).norm() < 1e-12);
            let (a, b) = (pp.quaternion_xyzw(), p.quaternion_xyzw());
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
            prop_assert!(pp.rotation().w >= 0.0);
        }

        #[test]
        fn composition_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let b = b.with_frames("b", "c");
            let c = c.with_frames("c", "d");
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert!((left.translation() - right.translation()).norm() < 1e-9);
            prop_assert!(left.angle_to(&right) < 1e-9);
        }
    }
}
