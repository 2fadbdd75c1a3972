//! Controlled time-offset and extrinsic perturbations, and sensitivity
//! sweeps against the internal pipelines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Extrinsic, Pose};
use crate::scenario::{evaluate_against_truth, run_pipeline, Pipeline, Scenario};
use crate::series::{ImuSeries, PositionSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    TimeOffset,
    TranslationOffset,
    RotationOffset,
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_offset" => Ok(PerturbationKind::TimeOffset),
            "translation_offset" => Ok(PerturbationKind::TranslationOffset),
            "rotation_offset" => Ok(PerturbationKind::RotationOffset),
            _ => Err(Error::Parameter(format!("unknown perturbation kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

impl Axis {
    /// Unit vector of the axis; roll/pitch/yaw rotate about x/y/z.
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X | Axis::Roll => Vector3::x(),
            Axis::Y | Axis::Pitch => Vector3::y(),
            Axis::Z | Axis::Yaw => Vector3::z(),
        }
    }

    fn is_linear(self) -> bool {
        matches!(self, Axis::X | Axis::Y | Axis::Z)
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            "roll" => Ok(Axis::Roll),
            "pitch" => Ok(Axis::Pitch),
            "yaw" => Ok(Axis::Yaw),
            _ => Err(Error::Parameter(format!("unknown axis `{s}`"))),
        }
    }
}

/// One perturbation. `magnitude` is in ms for time offsets, m for
/// translations and degrees for rotations. `target` names the stream or
/// extrinsic: `imu`, `tps` (time only) or `prism` (translation only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub axis: Option<Axis>,
    pub magnitude: f64,
    pub target: String,
}

impl PerturbationSpec {
    pub fn time_offset(target: &str, ms: f64) -> Self {
        PerturbationSpec { kind: PerturbationKind::TimeOffset, axis: None, magnitude: ms, target: target.into() }
    }

    pub fn translation(target: &str, axis: Axis, m: f64) -> Self {
        PerturbationSpec { kind: PerturbationKind::TranslationOffset, axis: Some(axis), magnitude: m, target: target.into() }
    }

    pub fn rotation(target: &str, axis: Axis, deg: f64) -> Self {
        PerturbationSpec { kind: PerturbationKind::RotationOffset, axis: Some(axis), magnitude: deg, target: target.into() }
    }

    pub fn with_magnitude(&self, magnitude: f64) -> Self {
        PerturbationSpec { magnitude, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(Error::Parameter(format!("magnitude must be finite, got {}", self.magnitude)));
        }
        match (self.kind, self.axis) {
            (PerturbationKind::TimeOffset, None) => Ok(()),
            (PerturbationKind::TimeOffset, Some(a)) => {
                Err(Error::Parameter(format!("time offsets take no axis, got {a:?}")))
            }
            (_, None) => Err(Error::Parameter("extrinsic perturbations need an axis".into())),
            (PerturbationKind::TranslationOffset, Some(a)) if !a.is_linear() => {
                Err(Error::Parameter(format!("translation axis must be x|y|z, got {a:?}")))
            }
            (PerturbationKind::RotationOffset, Some(a)) if a.is_linear() => {
                Err(Error::Parameter(format!("rotation axis must be roll|pitch|yaw, got {a:?}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.kind {
            PerturbationKind::TimeOffset => "ms",
            PerturbationKind::TranslationOffset => "m",
            PerturbationKind::RotationOffset => "deg",
        };
        let axis = self.axis.map(|a| format!(" {a:?}").to_lowercase()).unwrap_or_default();
        write!(f, "{:?}{axis} {}{unit} on {}", self.kind, self.magnitude, self.target)
    }
}

fn offset_ns(ms: f64) -> Result<i64> {
    if !ms.is_finite() {
        return Err(Error::Parameter(format!("offset must be finite, got {ms}")));
    }
    Ok((ms * 1e6).round() as i64)
}

/// Streams whose timestamps can be shifted.
pub trait TimeShift: Sized {
    /// Shifts every timestamp by `offset_ms` (rounded to whole ns); values
    /// are untouched.
    fn shifted(&self, offset_ms: f64) -> Result<Self>;
}

impl TimeShift for ImuSeries {
    fn shifted(&self, offset_ms: f64) -> Result<Self> {
        let ns = offset_ns(offset_ms)?;
        self.map_samples(|s| crate::series::ImuSample { t: s.t + ns, ..*s })
    }
}

impl TimeShift for PositionSeries {
    fn shifted(&self, offset_ms: f64) -> Result<Self> {
        let ns = offset_ns(offset_ms)?;
        self.map_samples(|&(t, p)| (t + ns, p))
    }
}

pub fn inject_time_offset<S: TimeShift>(stream: &S, offset_ms: f64) -> Result<S> {
    stream.shifted(offset_ms)
}

/// Translation `t' = t + R·δ` and rotation `R' = R·Exp(θ·axis)`: both
/// right-multiplied, i.e. applied in the extrinsic's own (child) frame.
pub fn perturb_extrinsic(ext: &Extrinsic, spec: &PerturbationSpec) -> Result<Extrinsic> {
    spec.validate()?;
    let axis = spec.axis.expect("validated");
    let p = &ext.pose;
    let pose = match spec.kind {
        PerturbationKind::TranslationOffset => Pose::new(
            p.frame_from().clone(),
            p.frame_to().clone(),
            *p.rotation(),
            p.translation() + p.rotation() * (axis.unit() * spec.magnitude),
        ),
        PerturbationKind::RotationOffset => {
            let d = UnitQuaternion::from_scaled_axis(axis.unit() * spec.magnitude.to_radians());
            Pose::new(p.frame_from().clone(), p.frame_to().clone(), p.rotation() * d, *p.translation())
        }
        PerturbationKind::TimeOffset => {
            return Err(Error::Parameter("time offsets do not apply to extrinsics".into()))
        }
    };
    Ok(Extrinsic { pose, label: ext.label.clone() })
}

/// Applies `spec` to a copy of the scenario.
pub fn perturb_scenario(sc: &Scenario, spec: &PerturbationSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut out = sc.clone();
    match (spec.kind, spec.target.as_str()) {
        (PerturbationKind::TimeOffset, t) if t == sc.manifest.imu_label || t == "imu" => {
            out.imu = inject_time_offset(&sc.imu, spec.magnitude)?
        }
        (PerturbationKind::TimeOffset, t) if t == sc.manifest.tps_label || t == "tps" => {
            out.tps = inject_time_offset(&sc.tps, spec.magnitude)?
        }
        (PerturbationKind::TranslationOffset | PerturbationKind::RotationOffset, "imu") => {
            out.imu_extrinsic = perturb_extrinsic(&sc.imu_extrinsic, spec)?
        }
        (PerturbationKind::TranslationOffset, "prism") => {
            out.prism_in_body += spec.axis.expect("validated").unit() * spec.magnitude;
            out.manifest.prism_in_body = out.prism_in_body.into();
        }
        (k, t) => return Err(Error::Parameter(format!("{k:?} cannot target `{t}`"))),
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub magnitude: f64,
    /// RMSE after SE(3) alignment, m; NaN if the pipeline failed.
    pub ate_m: f64,
    /// RMSE over `delta_m` segments, m; NaN if unavailable.
    pub rte_m: f64,
    pub converged: bool,
    pub divergent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub pipeline: Pipeline,
    pub rte_delta_m: f64,
    /// A row diverges when ATE exceeds this multiple of the trajectory span.
    pub divergence_factor: f64,
}

impl SweepConfig {
    pub fn new(pipeline: Pipeline) -> Self {
        SweepConfig { pipeline, rte_delta_m: 1.0, divergence_factor: 10.0 }
    }
}

/// For each magnitude: perturb, run the pipeline, evaluate against ground
/// truth. Failures are recorded as divergent rows; the sweep continues.
pub fn sensitivity_sweep(
    sc: &Scenario,
    spec: &PerturbationSpec,
    magnitudes: &[f64],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    let span = sc.span_m();
    let mut rows = Vec::with_capacity(magnitudes.len());
    for (index, &m) in magnitudes.iter().enumerate() {
        let s = spec.with_magnitude(m);
        let perturbed = perturb_scenario(sc, &s)?;
        let result = run_pipeline(&perturbed, cfg.pipeline).and_then(|out| {
            let (a, r) = evaluate_against_truth(&out.trajectory, &sc.ground_truth, cfg.rte_delta_m)?;
            Ok((a.rmse, r.map_or(f64::NAN, |r| r.rmse), out.converged()))
        });
        let row = match result {
            Ok((ate_m, rte_m, converged)) => SweepRow {
                index,
                magnitude: m,
                ate_m,
                rte_m,
                converged,
                divergent: !(ate_m <= cfg.divergence_factor * span),
            },
            Err(e) => {
                log::warn!("sweep row {index} ({s}) failed: {e}");
                SweepRow { index, magnitude: m, ate_m: f64::NAN, rte_m: f64::NAN, converged: false, divergent: true }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("index,magnitude,ate_m,rte_m,converged,divergent\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.index, r.magnitude, r.ate_m, r.rte_m, r.converged as u8, r.divergent as u8
        ));
    }
    s
}
