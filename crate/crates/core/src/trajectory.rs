//! Timestamped pose sequences and TUM-format I/O.

use std::io::{BufRead, Write};

use nalgebra::{Isometry3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{slerp, FrameId, Pose, Timestamp};

/// Ordered poses sharing one pair of frames. Timestamps strictly increase.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    frame_from: FrameId,
    frame_to: FrameId,
    stamps: Vec<Timestamp>,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(
        frame_from: impl Into<FrameId>,
        frame_to: impl Into<FrameId>,
        samples: Vec<(Timestamp, Pose)>,
    ) -> Result<Self> {
        let frame_from = frame_from.into();
        let frame_to = frame_to.into();
        let mut stamps = Vec::with_capacity(samples.len());
        let mut poses = Vec::with_capacity(samples.len());
        for (t, p) in samples {
            if let Some(prev) = stamps.last() {
                if t <= *prev {
                    return Err(Error::Data(format!(
                        "timestamps must strictly increase ({prev} then {t})"
                    )));
                }
            }
            if p.frame_from() != &frame_from || p.frame_to() != &frame_to {
                return Err(Error::Frame {
                    expected: format!("{frame_from}->{frame_to}"),
                    found: format!("{}->{}", p.frame_from(), p.frame_to()),
                });
            }
            stamps.push(t);
            poses.push(p);
        }
        Ok(Trajectory { frame_from, frame_to, stamps, poses })
    }

    pub fn from_isometries(
        frame_from: impl Into<FrameId>,
        frame_to: impl Into<FrameId>,
        samples: impl IntoIterator<Item = (Timestamp, Isometry3<f64>)>,
    ) -> Result<Self> {
        let frame_from = frame_from.into();
        let frame_to = frame_to.into();
        let samples = samples
            .into_iter()
            .map(|(t, iso)| (t, Pose::from_isometry(frame_from.clone(), frame_to.clone(), &iso)))
            .collect();
        Trajectory::new(frame_from, frame_to, samples)
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn frame_from(&self) -> &FrameId {
        &self.frame_from
    }

    pub fn frame_to(&self) -> &FrameId {
        &self.frame_to
    }

    pub fn stamps(&self) -> &[Timestamp] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, &Pose)> {
        self.stamps.iter().copied().zip(self.poses.iter())
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| *p.translation()).collect()
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.stamps.first().copied()
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.stamps.last().copied()
    }

    /// Applies `left ∘ pose ∘ right` to every sample. Frames follow the composition.
    pub fn transformed(&self, left: &Pose, right: &Pose) -> Result<Trajectory> {
        let samples = self
            .iter()
            .map(|(t, p)| Ok((t, left.compose(p)?.compose(right)?)))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(left.frame_from().clone(), right.frame_to().clone(), samples)
    }

    /// Pose at `t`: translation interpolated linearly, rotation by shortest-arc slerp.
    pub fn interpolate(&self, t: Timestamp) -> Result<Pose> {
        if self.len() < 2 {
            return Err(Error::Data("interpolation needs at least two samples".into()));
        }
        let (first, last) = (self.stamps[0], self.stamps[self.len() - 1]);
        if t < first || t > last {
            return Err(Error::Range(format!("t={t} outside [{first}, {last}]")));
        }
        let i = match self.stamps.binary_search(&t) {
            Ok(i) => return Ok(self.poses[i].clone()),
            Err(i) => i,
        };
        let (t0, t1) = (self.stamps[i - 1], self.stamps[i]);
        let s = (t - t0) as f64 / (t1 - t0) as f64;
        let (p0, p1) = (&self.poses[i - 1], &self.poses[i]);
        let trans = p0.translation() * (1.0 - s) + p1.translation() * s;
        let rot = slerp(p0.rotation(), p1.rotation(), s);
        Ok(Pose::new(self.frame_from.clone(), self.frame_to.clone(), rot, trans))
    }

    /// Cumulative path length along the translations, starting at 0.
    pub fn path_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation() - self.poses[i - 1].translation()).norm();
            }
            out.push(acc);
        }
        out
    }
}

pub fn interpolate_pose(traj: &Trajectory, t: Timestamp) -> Result<Pose> {
    traj.interpolate(t)
}

/// Parses a decimal seconds string into integer nanoseconds without going
/// through `f64` when the string is a plain decimal.
pub fn parse_secs_to_nanos(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.contains(['e', 'E']) {
        let v: f64 = s.parse().ok()?;
        return v.is_finite().then(|| (v * 1e9).round() as i64);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut frac_ns: i64 = 0;
    for (k, b) in frac_part.bytes().enumerate() {
        let d = (b - b'0') as i64;
        if k < 9 {
            frac_ns = frac_ns * 10 + d;
        } else if k == 9 {
            if d >= 5 {
                frac_ns += 1;
            }
            break;
        }
    }
    for _ in frac_part.len()..9 {
        frac_ns *= 10;
    }
    let total = secs.checked_mul(1_000_000_000)?.checked_add(frac_ns)?;
    Some(if neg { -total } else { total })
}

/// Reads `t x y z qx qy qz qw` lines; `#` lines and blank lines are skipped.
pub fn read_tum<R: BufRead>(
    reader: R,
    frame_from: impl Into<FrameId>,
    frame_to: impl Into<FrameId>,
) -> Result<Trajectory> {
    let frame_from = frame_from.into();
    let frame_to = frame_to.into();
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let parse_err = |msg: String| Error::Parse { line: lineno + 1, msg };
        if fields.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, got {}", fields.len())));
        }
        let t = parse_secs_to_nanos(fields[0])
            .ok_or_else(|| parse_err(format!("bad timestamp `{}`", fields[0])))?;
        let mut v = [0.0; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|_| parse_err(format!("bad number `{f}`")))?;
        }
        let pose = Pose::from_arrays(
            frame_from.clone(),
            frame_to.clone(),
            [v[0], v[1], v[2]],
            [v[3], v[4], v[5], v[6]],
        )
        .map_err(|e| parse_err(e.to_string()))?;
        samples.push((Timestamp(t), pose));
    }
    Trajectory::new(frame_from, frame_to, samples)
}

pub fn write_tum<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "# t x y z qx qy qz qw  ({} <- {})", traj.frame_from(), traj.frame_to())?;
    for (t, p) in traj.iter() {
        let tr = p.translation();
        let [qx, qy, qz, qw] = p.quaternion_xyzw();
        writeln!(w, "{t} {} {} {} {qx} {qy} {qz} {qw}", tr.x, tr.y, tr.z)?;
    }
    Ok(())
}
