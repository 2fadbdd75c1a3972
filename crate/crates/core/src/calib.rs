//! Calibration data-collection feedback: static-segment detection, 3×3
//! image-coverage accumulation and covariance readiness gates.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Timestamp};

pub const MAX_CORNERS: usize = 144;
pub const BLOCK_CAPACITY: u32 = 10;
pub const STATIC_THRESHOLD_M: f64 = 0.001;
pub const RING_BUFFER_LEN: usize = 10;
pub const INTRINSIC_MAX_SIGMA_PX: f64 = 2.0;
pub const EXTRINSIC_MAX_SIGMA_M: f64 = 0.001;

/// One calibration-target detection; `target_pose` is camera ← target.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionEvent {
    pub t: Timestamp,
    pub camera: String,
    pub target_pose: Pose,
    /// Corner pixel locations (u, v).
    pub corners: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct DetectionJson {
    t_ns: i64,
    camera: String,
    #[serde(default)]
    translation_m: [f64; 3],
    #[serde(default = "identity_xyzw")]
    quaternion_xyzw: [f64; 4],
    #[serde(default)]
    corners: Vec<[f64; 2]>,
}

fn identity_xyzw() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl DetectionEvent {
    pub fn new(t: Timestamp, camera: &str, target_pose: Pose, corners: Vec<[f64; 2]>) -> Result<Self> {
        if corners.len() > MAX_CORNERS {
            return Err(Error::Data(format!("{} corners exceed the maximum of {MAX_CORNERS}", corners.len())));
        }
        Ok(DetectionEvent { t, camera: camera.into(), target_pose, corners })
    }

    /// Parses one JSON line: `t_ns`, `camera`, optional `translation_m`,
    /// `quaternion_xyzw` and `corners` (list of `[u, v]`).
    pub fn from_json(s: &str) -> Result<Self> {
        let j: DetectionJson = serde_json::from_str(s)?;
        let pose = Pose::from_arrays(j.camera.as_str(), "target", j.translation_m, j.quaternion_xyzw)?;
        DetectionEvent::new(Timestamp(j.t_ns), &j.camera, pose, j.corners)
    }

    pub fn to_json(&self) -> String {
        let j = DetectionJson {
            t_ns: self.t.nanos(),
            camera: self.camera.clone(),
            translation_m: (*self.target_pose.translation()).into(),
            quaternion_xyzw: self.target_pose.quaternion_xyzw(),
            corners: self.corners.clone(),
        };
        serde_json::to_string(&j).expect("detection serializes")
    }
}

/// Reads one detection per non-empty line.
pub fn read_detections_jsonl(s: &str) -> Result<Vec<DetectionEvent>> {
    s.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| DetectionEvent::from_json(l).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() }))
        .collect()
}

/// Corner counts per 3×3 image block, indexed `[row][col]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub width: u32,
    pub height: u32,
    pub counts: [[u32; 3]; 3],
    pub capacity: u32,
}

/// Result of offering one detection to a grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageDecision {
    pub accepted: bool,
    /// Corners outside the image, ignored.
    pub dropped_corners: usize,
}

/// Block index along one axis. Boundaries sit at exact thirds; a coordinate
/// on a boundary goes to the lower block.
fn block_index(x: f64, extent: u32) -> usize {
    let e = extent as f64;
    if 3.0 * x <= e {
        0
    } else if 3.0 * x <= 2.0 * e {
        1
    } else {
        2
    }
}

impl CoverageGrid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!("image size must be positive, got {width}x{height}")));
        }
        Ok(CoverageGrid { width, height, counts: [[0; 3]; 3], capacity: BLOCK_CAPACITY })
    }

    /// `(row, col)` of the block holding pixel (u, v), or `None` outside
    /// `[0, width] × [0, height]`.
    pub fn block_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let inside = u.is_finite()
            && v.is_finite()
            && (0.0..=self.width as f64).contains(&u)
            && (0.0..=self.height as f64).contains(&v);
        inside.then(|| (block_index(v, self.height), block_index(u, self.width)))
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_full(&self) -> bool {
        self.counts.iter().flatten().all(|&c| c >= self.capacity)
    }

    /// Accepts the whole detection iff any block it touches is below
    /// capacity before insertion; accepted corners are all added, so blocks
    /// may exceed capacity.
    pub fn accumulate(&mut self, det: &DetectionEvent) -> CoverageDecision {
        let mut blocks = Vec::with_capacity(det.corners.len());
        let mut dropped = 0;
        for &[u, v] in &det.corners {
            match self.block_of(u, v) {
                Some(b) => blocks.push(b),
                None => dropped += 1,
            }
        }
        if dropped > 0 {
            log::warn!("{} at {}: {dropped} corners outside the image dropped", det.camera, det.t);
        }
        let accepted = blocks.iter().any(|&(r, c)| self.counts[r][c] < self.capacity);
        if accepted {
            for (r, c) in blocks {
                self.counts[r][c] += 1;
            }
        }
        CoverageDecision { accepted, dropped_corners: dropped }
    }
}

/// Pure form of [`CoverageGrid::accumulate`].
pub fn coverage_accumulate(grid: &CoverageGrid, det: &DetectionEvent) -> (bool, CoverageGrid) {
    let mut g = grid.clone();
    let d = g.accumulate(det);
    (d.accepted, g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticConfig {
    pub motion_threshold_m: f64,
    /// Optional gate on target rotation between neighbours; off by default.
    pub rotation_threshold_rad: Option<f64>,
}

impl Default for StaticConfig {
    fn default() -> Self {
        StaticConfig { motion_threshold_m: STATIC_THRESHOLD_M, rotation_threshold_rad: None }
    }
}

/// Run of consecutive static detections of one camera.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticSegment {
    pub camera: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub count: usize,
}

fn still(a: &DetectionEvent, b: &DetectionEvent, cfg: &StaticConfig) -> bool {
    let moved = (a.target_pose.translation() - b.target_pose.translation()).norm();
    moved < cfg.motion_threshold_m && cfg.rotation_threshold_rad.is_none_or(|r| a.target_pose.angle_to(&b.target_pose) < r)
}

/// A detection is static when the target moved less than the threshold
/// since its predecessor and until its successor (same camera). Segments
/// are listed per camera in input order, cameras sorted by name.
pub fn detect_static_segments(detections: &[DetectionEvent], cfg: &StaticConfig) -> Result<Vec<StaticSegment>> {
    if !(cfg.motion_threshold_m.is_finite() && cfg.motion_threshold_m > 0.0) {
        return Err(Error::Parameter(format!("motion threshold must be > 0, got {}", cfg.motion_threshold_m)));
    }
    let mut per_cam: BTreeMap<&str, Vec<&DetectionEvent>> = BTreeMap::new();
    for d in detections {
        per_cam.entry(d.camera.as_str()).or_default().push(d);
    }
    let mut out = Vec::new();
    for (cam, evs) in per_cam {
        let is_static: Vec<bool> = (0..evs.len())
            .map(|i| i > 0 && i + 1 < evs.len() && still(evs[i - 1], evs[i], cfg) && still(evs[i], evs[i + 1], cfg))
            .collect();
        let mut i = 0;
        while i < evs.len() {
            if !is_static[i] {
                i += 1;
                continue;
            }
            let s = i;
            while i + 1 < evs.len() && is_static[i + 1] {
                i += 1;
            }
            out.push(StaticSegment { camera: cam.to_string(), start: evs[s].t, end: evs[i].t, count: i - s + 1 });
            i += 1;
        }
    }
    Ok(out)
}

/// The most recent detections of each camera, for grouping across cameras.
#[derive(Clone, Debug)]
pub struct DetectionBuffer {
    capacity: usize,
    per_camera: BTreeMap<String, VecDeque<DetectionEvent>>,
}

impl Default for DetectionBuffer {
    fn default() -> Self {
        DetectionBuffer::new(RING_BUFFER_LEN)
    }
}

impl DetectionBuffer {
    pub fn new(capacity: usize) -> Self {
        DetectionBuffer { capacity: capacity.max(1), per_camera: BTreeMap::new() }
    }

    pub fn push(&mut self, det: DetectionEvent) {
        let q = self.per_camera.entry(det.camera.clone()).or_default();
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(det);
    }

    pub fn camera(&self, name: &str) -> impl Iterator<Item = &DetectionEvent> {
        self.per_camera.get(name).into_iter().flatten()
    }

    /// For each camera, the buffered detection nearest to `t` within
    /// `window_ns`.
    pub fn group_at(&self, t: Timestamp, window_ns: i64) -> Vec<&DetectionEvent> {
        self.per_camera
            .values()
            .filter_map(|q| q.iter().filter(|d| (d.t - t).abs() <= window_ns).min_by_key(|d| (d.t - t).abs()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibPhase {
    /// Projection parameter σ in pixels.
    Intrinsic,
    /// Translation σ in meters.
    Extrinsic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub sigma: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadinessReport {
    pub phase: CalibPhase,
    pub threshold: f64,
    pub params: Vec<ParamCheck>,
    pub ready: bool,
}

/// Passes each parameter whose σ is strictly below the phase threshold
/// (2 px intrinsic, 1 mm extrinsic); ready when all pass.
pub fn readiness_check(sigmas: &[(String, f64)], phase: CalibPhase) -> Result<ReadinessReport> {
    if sigmas.is_empty() {
        return Err(Error::Data("no parameter sigmas given".into()));
    }
    if let Some((n, s)) = sigmas.iter().find(|(_, s)| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Parameter(format!("sigma of `{n}` must be finite and >= 0, got {s}")));
    }
    let threshold = match phase {
        CalibPhase::Intrinsic => INTRINSIC_MAX_SIGMA_PX,
        CalibPhase::Extrinsic => EXTRINSIC_MAX_SIGMA_M,
    };
    let params: Vec<ParamCheck> =
        sigmas.iter().map(|(n, s)| ParamCheck { name: n.clone(), sigma: *s, pass: *s < threshold }).collect();
    let ready = params.iter().all(|p| p.pass);
    Ok(ReadinessReport { phase, threshold, params, ready })
}

/// Square roots of a covariance diagonal.
pub fn sigmas_from_covariance(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !cov.is_square() || cov.nrows() == 0 {
        return Err(Error::Data("covariance must be square and non-empty".into()));
    }
    cov.diagonal()
        .iter()
        .map(|&v| {
            if v.is_finite() && v >= 0.0 {
                Ok(v.sqrt())
            } else {
                Err(Error::Data(format!("invalid variance {v}")))
            }
        })
        .collect()
}
