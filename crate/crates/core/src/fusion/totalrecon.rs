//! Camera-to-prism calibration from target detections and TPS points.
//!
//! A camera observes a static target while a total station tracks a prism
//! rigidly attached to the camera. Unknowns: the prism position in the
//! camera frame (3) and the target pose in the world (6).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::umeyama_align;
use crate::geom::{skew, so3_exp, Pose};

/// Minimum pairwise rotation between detections for the problem to be observable.
pub const MIN_ROTATION_DIVERSITY_DEG: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TotalReconState {
    pub prism_in_camera: Vector3<f64>,
    /// world←target.
    pub target_pose_world: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TotalReconSample {
    /// camera←target.
    pub detection: Pose,
    /// Prism position measured by the total station, world frame.
    pub tps: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalReconReport {
    pub residual_norms_m: Vec<f64>,
    pub rmse_m: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_rotation_diversity_deg: f64,
}

/// Prism position in the target frame for one sample.
fn prism_in_target(p: &Vector3<f64>, det: &Pose) -> Vector3<f64> {
    det.rotation().inverse() * (p - det.translation())
}

/// `r_k = m_k − T_world←target · T_cam←target,k⁻¹ · p_prism`.
pub fn totalrecon_residuals(state: &TotalReconState, samples: &[TotalReconSample]) -> Vec<Vector3<f64>> {
    let t = &state.target_pose_world;
    samples
        .iter()
        .map(|s| s.tps - t.transform_point(&prism_in_target(&state.prism_in_camera, &s.detection)))
        .collect()
}

/// Residual Jacobian (3n × 9) over `[δp_prism, δθ_target, δt_target]`, with
/// the target rotation perturbed on the right: R_t ← R_t·Exp(δθ).
pub fn totalrecon_jacobian(state: &TotalReconState, samples: &[TotalReconSample]) -> DMatrix<f64> {
    let rt = state.target_pose_world.rotation().to_rotation_matrix().into_inner();
    let mut j = DMatrix::zeros(3 * samples.len(), 9);
    for (k, s) in samples.iter().enumerate() {
        let dr = s.detection.rotation().to_rotation_matrix().into_inner();
        let q = prism_in_target(&state.prism_in_camera, &s.detection);
        j.view_mut((3 * k, 0), (3, 3)).copy_from(&(-rt * dr.transpose()));
        j.view_mut((3 * k, 3), (3, 3)).copy_from(&(rt * skew(&q)));
        j.view_mut((3 * k, 6), (3, 3)).copy_from(&(-SMatrix::<f64, 3, 3>::identity()));
    }
    j
}

fn retract(state: &TotalReconState, d: &DVector<f64>) -> TotalReconState {
    let t = &state.target_pose_world;
    TotalReconState {
        prism_in_camera: state.prism_in_camera + Vector3::new(d[0], d[1], d[2]),
        target_pose_world: Pose::new(
            t.frame_from().clone(),
            t.frame_to().clone(),
            t.rotation() * so3_exp(&Vector3::new(d[3], d[4], d[5])),
            t.translation() + Vector3::new(d[6], d[7], d[8]),
        ),
    }
}

fn cost(state: &TotalReconState, samples: &[TotalReconSample]) -> f64 {
    0.5 * totalrecon_residuals(state, samples).iter().map(|r| r.norm_squared()).sum::<f64>()
}

fn stack(res: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(3 * res.len(), res.iter().flat_map(|r| r.iter().copied()))
}

const PARAM_NAMES: [&str; 9] = [
    "prism_x", "prism_y", "prism_z", "target_rx", "target_ry", "target_rz", "target_tx", "target_ty", "target_tz",
];

/// Levenberg–Marquardt over the 9 parameters.
pub fn totalrecon_solve(
    samples: &[TotalReconSample],
    init: &TotalReconState,
) -> Result<(TotalReconState, TotalReconReport)> {
    if samples.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 samples, got {}", samples.len())));
    }
    let mut diversity = 0.0f64;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            diversity = diversity.max(a.detection.rotation().angle_to(b.detection.rotation()).to_degrees());
        }
    }
    if diversity <= MIN_ROTATION_DIVERSITY_DEG {
        return Err(Error::Degenerate(format!(
            "detections differ by at most {diversity:.2} deg; prism_in_camera trades off against the target \
             translation (need > {MIN_ROTATION_DIVERSITY_DEG} deg)"
        )));
    }
    let mut x = init.clone();
    let mut c = cost(&x, samples);
    let mut lambda = 1e-3;
    let mut g0 = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..200 {
        let j = totalrecon_jacobian(&x, samples);
        let r = stack(&totalrecon_residuals(&x, samples));
        let h = j.transpose() * &j;
        let g = j.transpose() * &r;
        let gn = g.norm();
        let g0v = *g0.get_or_insert(gn);
        if gn <= 1e-10 * g0v.max(1e-300) || gn < 1e-14 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = h.clone();
            for i in 0..9 {
                a[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = retract(&x, &step);
            let cc = cost(&cand, samples);
            if cc < c {
                let small = step.norm() < 1e-14;
                x = cand;
                c = cc;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                converged = small;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: at a minimum to working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let j = totalrecon_jacobian(&x, samples);
    let h = j.transpose() * &j;
    let eig = h.clone().symmetric_eigen();
    let (imin, &emin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("9 eigenvalues");
    let emax = eig.eigenvalues.max();
    if emin <= 1e-12 * emax {
        let v = eig.eigenvectors.column(imin);
        let mut idx: Vec<usize> = (0..9).collect();
        idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
        return Err(Error::Degenerate(format!(
            "unconstrained direction dominated by {} and {}",
            PARAM_NAMES[idx[0]], PARAM_NAMES[idx[1]]
        )));
    }
    let norms: Vec<f64> = totalrecon_residuals(&x, samples).iter().map(|r| r.norm()).collect();
    let rmse = (norms.iter().map(|n| n * n).sum::<f64>() / norms.len() as f64).sqrt();
    Ok((
        x,
        TotalReconReport {
            residual_norms_m: norms,
            rmse_m: rmse,
            iterations,
            converged,
            max_rotation_diversity_deg: diversity,
        },
    ))
}

/// Starting point without prior knowledge: the camera centres expressed in
/// the target frame are rigidly aligned onto the TPS points (prism taken at
/// the camera centre), and the prism offset starts at zero.
pub fn totalrecon_initial_guess(samples: &[TotalReconSample]) -> Result<TotalReconState> {
    let centres: Vec<Vector3<f64>> = samples.iter().map(|s| s.detection.inverse().translation().to_owned()).collect();
    let tps: Vec<Vector3<f64>> = samples.iter().map(|s| s.tps).collect();
    let a = umeyama_align(&centres, &tps, false)?;
    Ok(TotalReconState {
        prism_in_camera: Vector3::zeros(),
        target_pose_world: Pose::new("world", "target", a.rotation, a.translation),
    })
}

#[derive(Serialize, Deserialize)]
struct SampleJson {
    /// camera ← target
    translation_m: [f64; 3],
    quaternion_xyzw: [f64; 4],
    tps: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SamplesFile {
    samples: Vec<SampleJson>,
}

/// Parses `{"samples": [{"translation_m", "quaternion_xyzw", "tps"}, ...]}`
/// where the pose is the camera ← target detection.
pub fn totalrecon_samples_from_json(s: &str) -> Result<Vec<TotalReconSample>> {
    let f: SamplesFile = serde_json::from_str(s)?;
    f.samples
        .into_iter()
        .map(|j| {
            Ok(TotalReconSample {
                detection: Pose::from_arrays("camera", "target", j.translation_m, j.quaternion_xyzw)?,
                tps: Vector3::from(j.tps),
            })
        })
        .collect()
}

pub fn totalrecon_samples_to_json(samples: &[TotalReconSample]) -> String {
    let f = SamplesFile {
        samples: samples
            .iter()
            .map(|s| SampleJson {
                translation_m: (*s.detection.translation()).into(),
                quaternion_xyzw: s.detection.quaternion_xyzw(),
                tps: s.tps.into(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&f).expect("samples serialize")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Each camera's prism estimate expressed in the reference frame.
    pub in_reference: Vec<(String, [f64; 3])>,
    pub pairwise_m: Vec<(String, String, f64)>,
    pub max_spread_m: f64,
}

/// Maps per-camera prism estimates into the reference camera frame through
/// `extrinsics[label]` (reference←camera) and reports their pairwise distances.
pub fn totalrecon_consistency(
    estimates: &[(String, Vector3<f64>)],
    extrinsics: &BTreeMap<String, Pose>,
) -> Result<ConsistencyReport> {
    if estimates.len() < 2 {
        return Err(Error::Data("need at least two camera estimates".into()));
    }
    let mut pts = Vec::with_capacity(estimates.len());
    for (label, p) in estimates {
        let ext = extrinsics
            .get(label)
            .ok_or_else(|| Error::Data(format!("no extrinsic for camera `{label}`")))?;
        pts.push((label.clone(), ext.transform_point(p)));
    }
    let mut pairwise = Vec::new();
    let mut max_spread = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = (a.1 - b.1).norm();
            max_spread = max_spread.max(d);
            pairwise.push((a.0.clone(), b.0.clone(), d));
        }
    }
    Ok(ConsistencyReport {
        in_reference: pts.into_iter().map(|(l, p)| (l, p.into())).collect(),
        pairwise_m: pairwise,
        max_spread_m: max_spread,
    })
}

/// Synthetic calibration set: `n` camera poses looking at a target, with
/// rotations spread over roughly ±`spread_deg` and optional isotropic TPS noise.
pub fn synthetic_samples(
    truth: &TotalReconState,
    n: usize,
    spread_deg: f64,
    tps_sigma_m: f64,
    seed: u64,
) -> Vec<TotalReconSample> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = (tps_sigma_m > 0.0).then(|| Normal::new(0.0, tps_sigma_m).expect("valid sigma"));
    let spread = spread_deg.to_radians();
    let t_wt = truth.target_pose_world.with_frames("world", "target");
    (0..n)
        .map(|k| {
            // camera about 2 m in front of the target, looking at it
            let phase = k as f64 / n.max(1) as f64 * std::f64::consts::TAU;
            let aa = Vector3::new(spread * phase.sin(), spread * (2.0 * phase).cos(), 0.5 * spread * phase.cos());
            let jitter = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let r_tc = UnitQuaternion::from_scaled_axis(aa + jitter * spread);
            let t_tc = r_tc * Vector3::new(0.0, 0.0, -2.0);
            let det = Pose::new("target", "camera", r_tc, t_tc).inverse();
            let p_world = t_wt.transform_point(&prism_in_target(&truth.prism_in_camera, &det));
            let n = noise.map_or(Vector3::zeros(), |d| Vector3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng)));
            TotalReconSample { detection: det, tps: p_world + n }
        })
        .collect()
}
