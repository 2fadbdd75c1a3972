//! Batch TPS + IMU keyframe smoother.
//!
//! Each keyframe carries rotation (world←body), position, velocity, gyro and
//! accel bias: 15 parameters ordered `[δθ, δp, δv, δb_g, δb_a]` with the
//! rotation perturbed on the right. All factors couple at most two
//! consecutive keyframes, so the Gauss-Newton system is block tridiagonal.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::blocktri::BlockTridiag;
use crate::fusion::dropouts::detect_dropouts;
use crate::geom::{so3_exp, so3_log, Pose, Timestamp};
use crate::imu::preint::{preintegrate, preintegrate_with_noise, segment_samples, ImuBias, NoiseDensity, Preintegrated};
use crate::imu::strapdown::NavState;
use crate::series::{ImuSample, ImuSeries, PositionSeries};
use crate::synth::{gravity_vector, ImuGrade, ImuNoiseModel};
use crate::trajectory::Trajectory;

const DIM: usize = 15;
type M15 = SMatrix<f64, DIM, DIM>;
type V15 = SVector<f64, DIM>;
type M9 = SMatrix<f64, 9, 9>;

/// Finite-difference step for Jacobians, in every state unit.
const JAC_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iterations: usize,
    /// Stop when the update norm falls below this.
    pub step_tolerance: f64,
    /// Converged when ‖g‖ ≤ `gradient_tolerance` · ‖g₀‖.
    pub gradient_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 3.0,
            max_iterations: 200,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Standard deviations of the weak prior on the first keyframe. It only
/// fixes directions no measurement constrains (e.g. yaw at standstill).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSigmas {
    pub rotation_rad: f64,
    pub position_m: f64,
    pub velocity_mps: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for PriorSigmas {
    fn default() -> Self {
        PriorSigmas { rotation_rad: 0.5, position_m: 1.0, velocity_mps: 1.0, gyro_bias: 0.01, accel_bias: 0.1 }
    }
}

/// IMU noise used to weight the factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionNoise {
    pub gyro_density: f64,
    pub accel_density: f64,
    pub gyro_bias_rw: f64,
    pub accel_bias_rw: f64,
}

impl From<&ImuNoiseModel> for FusionNoise {
    fn from(m: &ImuNoiseModel) -> Self {
        FusionNoise {
            gyro_density: m.gyro_noise_density,
            accel_density: m.accel_noise_density,
            gyro_bias_rw: m.gyro_bias_instability,
            accel_bias_rw: m.accel_bias_instability,
        }
    }
}

impl FusionNoise {
    // Floors keep the information matrix finite for idealised inputs.
    fn floored(&self) -> FusionNoise {
        FusionNoise {
            gyro_density: self.gyro_density.max(1e-7),
            accel_density: self.accel_density.max(1e-6),
            gyro_bias_rw: self.gyro_bias_rw.max(1e-9),
            accel_bias_rw: self.accel_bias_rw.max(1e-8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub keyframe_hz: f64,
    pub gravity: [f64; 3],
    pub noise: FusionNoise,
    pub lm: LmConfig,
    pub prior: PriorSigmas,
    /// Dropout detection threshold in nominal TPS periods.
    pub gap_factor: f64,
    /// Lower bound on the TPS σ used for weighting.
    pub min_tps_sigma_m: f64,
    /// Keyframes whose smoothed yaw σ exceeds this are flagged.
    pub weak_yaw_sigma_rad: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            keyframe_hz: 10.0,
            gravity: gravity_vector().into(),
            noise: FusionNoise::from(&ImuGrade::Tactical.noise_model(0)),
            lm: LmConfig::default(),
            prior: PriorSigmas::default(),
            gap_factor: 3.0,
            min_tps_sigma_m: 1e-6,
            weak_yaw_sigma_rad: 5f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub initial_gradient_norm: f64,
    pub final_gradient_norm: f64,
    pub final_lambda: f64,
}

impl LmReport {
    pub fn gradient_reduction(&self) -> f64 {
        if self.initial_gradient_norm > 0.0 {
            self.final_gradient_norm / self.initial_gradient_norm
        } else {
            0.0
        }
    }
}

/// Fused keyframe trajectory with per-keyframe position uncertainty.
#[derive(Clone, Debug)]
pub struct FusedTrajectory {
    /// world←body at keyframe times.
    pub trajectory: Trajectory,
    pub states: Vec<NavState>,
    /// Smoothed marginal σ (all measurements), world axes, m.
    pub position_sigma: Vec<Vector3<f64>>,
    /// Forward marginal σ given measurements up to each keyframe.
    pub filtered_position_sigma: Vec<Vector3<f64>>,
    pub yaw_sigma_rad: Vec<f64>,
    pub weak_yaw: Vec<bool>,
    pub dropouts: Vec<(Timestamp, Timestamp)>,
    /// Number of TPS measurements bound to each keyframe.
    pub measurements_per_keyframe: Vec<usize>,
    pub report: LmReport,
    pub gravity: Vector3<f64>,
}

impl FusedTrajectory {
    /// Body pose at `t`, predicted from the preceding keyframe with the IMU.
    pub fn pose_at(&self, imu: &ImuSeries, t: Timestamp) -> Result<Pose> {
        let stamps = self.trajectory.stamps();
        if stamps.is_empty() || t < stamps[0] || t > stamps[stamps.len() - 1] {
            return Err(Error::Range(format!("{t} outside the fused span")));
        }
        let k = stamps.partition_point(|&s| s <= t) - 1;
        let st = &self.states[k];
        let pre = preintegrate(&segment_samples(imu, st.t, t)?, &st.bias)?;
        let (r, p, _) = pre.predict(st.rotation(), st.position(), &st.velocity, &self.gravity);
        Ok(Pose::new("world", "body", r, p))
    }

    /// Per-keyframe CSV of smoothed and filtered σ.
    pub fn sigma_csv(&self) -> String {
        let mut s = String::from("t_ns,sigma_x,sigma_y,sigma_z,filtered_x,filtered_y,filtered_z,yaw_sigma_rad,weak_yaw\n");
        for k in 0..self.states.len() {
            let (a, b) = (self.position_sigma[k], self.filtered_position_sigma[k]);
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.states[k].t.nanos(),
                a.x,
                a.y,
                a.z,
                b.x,
                b.y,
                b.z,
                self.yaw_sigma_rad[k],
                self.weak_yaw[k] as u8
            ));
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
struct KState {
    r: UnitQuaternion<f64>,
    p: Vector3<f64>,
    v: Vector3<f64>,
    bg: Vector3<f64>,
    ba: Vector3<f64>,
}

impl KState {
    fn bias(&self) -> ImuBias {
        ImuBias { gyro: self.bg, accel: self.ba }
    }

    fn retract(&self, d: &V15) -> KState {
        KState {
            r: self.r * so3_exp(&d.fixed_rows::<3>(0).into_owned()),
            p: self.p + d.fixed_rows::<3>(3),
            v: self.v + d.fixed_rows::<3>(6),
            bg: self.bg + d.fixed_rows::<3>(9),
            ba: self.ba + d.fixed_rows::<3>(12),
        }
    }

    fn nudged(&self, i: usize, h: f64) -> KState {
        let mut d = V15::zeros();
        d[i] = h;
        self.retract(&d)
    }
}

struct ImuFactor {
    k: usize,
    samples: Vec<ImuSample>,
    sqrt_info: M9,
}

struct TpsFactor {
    k: usize,
    /// IMU samples from keyframe k to the measurement time.
    samples: Vec<ImuSample>,
    m: Vector3<f64>,
}

struct Problem {
    gravity: Vector3<f64>,
    prism: Vector3<f64>,
    tps_w: f64,
    bias_w: (f64, f64),
    bias_dt: Vec<f64>,
    prior_state: KState,
    prior_w: [f64; 5],
    imu: Vec<ImuFactor>,
    tps: Vec<TpsFactor>,
}

fn preint_of(samples: &[ImuSample], bias: &ImuBias) -> Preintegrated {
    if samples.len() < 2 {
        return Preintegrated::identity();
    }
    preintegrate(samples, bias).expect("segments validated at setup")
}

impl Problem {
    fn imu_residual(&self, f: &ImuFactor, a: &KState, b: &KState, pre: &Preintegrated) -> SVector<f64, 9> {
        let dt = pre.duration_s;
        let g = &self.gravity;
        let rt = a.r.inverse();
        let er = so3_log(&(pre.delta_r.inverse() * rt * b.r));
        let ev = rt * (b.v - a.v - g * dt) - pre.delta_v;
        let ep = rt * (b.p - a.p - a.v * dt - 0.5 * g * dt * dt) - pre.delta_p;
        let mut r = SVector::<f64, 9>::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&er);
        r.fixed_rows_mut::<3>(3).copy_from(&ev);
        r.fixed_rows_mut::<3>(6).copy_from(&ep);
        f.sqrt_info * r
    }

    fn tps_residual(&self, f: &TpsFactor, a: &KState, pre: &Preintegrated) -> Vector3<f64> {
        let (r, p, _) = pre.predict(&a.r, &a.p, &a.v, &self.gravity);
        (p + r * self.prism - f.m) * self.tps_w
    }

    fn bias_residual(&self, k: usize, a: &KState, b: &KState) -> SVector<f64, 6> {
        let s = self.bias_dt[k].sqrt();
        let mut r = SVector::<f64, 6>::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&((b.bg - a.bg) * (self.bias_w.0 / s)));
        r.fixed_rows_mut::<3>(3).copy_from(&((b.ba - a.ba) * (self.bias_w.1 / s)));
        r
    }

    fn prior_residual(&self, a: &KState) -> V15 {
        let p = &self.prior_state;
        let w = &self.prior_w;
        let mut r = V15::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&(so3_log(&(p.r.inverse() * a.r)) * w[0]));
        r.fixed_rows_mut::<3>(3).copy_from(&((a.p - p.p) * w[1]));
        r.fixed_rows_mut::<3>(6).copy_from(&((a.v - p.v) * w[2]));
        r.fixed_rows_mut::<3>(9).copy_from(&((a.bg - p.bg) * w[3]));
        r.fixed_rows_mut::<3>(12).copy_from(&((a.ba - p.ba) * w[4]));
        r
    }

    fn cost(&self, x: &[KState]) -> f64 {
        let mut c = self.prior_residual(&x[0]).norm_squared();
        for f in &self.imu {
            let pre = preint_of(&f.samples, &x[f.k].bias());
            c += self.imu_residual(f, &x[f.k], &x[f.k + 1], &pre).norm_squared();
        }
        for f in &self.tps {
            let pre = preint_of(&f.samples, &x[f.k].bias());
            c += self.tps_residual(f, &x[f.k], &pre).norm_squared();
        }
        for k in 0..x.len() - 1 {
            c += self.bias_residual(k, &x[k], &x[k + 1]).norm_squared();
        }
        0.5 * c
    }

    /// Gauss-Newton system `H`, gradient `g = Jᵀr`, and the part of each
    /// diagonal block contributed by factors linking to the next keyframe.
    fn linearize(&self, x: &[KState]) -> (BlockTridiag<DIM>, Vec<V15>, Vec<M15>) {
        let n = x.len();
        let mut h = BlockTridiag::<DIM>::new(n);
        let mut g = vec![V15::zeros(); n];
        let mut next = vec![M15::zeros(); n];
        let h2 = 2.0 * JAC_STEP;

        // prior
        {
            let r = self.prior_residual(&x[0]);
            let mut j = SMatrix::<f64, DIM, DIM>::zeros();
            for i in 0..DIM {
                let d = (self.prior_residual(&x[0].nudged(i, JAC_STEP)) - self.prior_residual(&x[0].nudged(i, -JAC_STEP))) / h2;
                j.set_column(i, &d);
            }
            h.diag[0] += j.transpose() * j;
            g[0] += j.transpose() * r;
        }

        for f in &self.imu {
            let (a, b) = (&x[f.k], &x[f.k + 1]);
            let pre = preint_of(&f.samples, &a.bias());
            let r = self.imu_residual(f, a, b, &pre);
            let mut ja = SMatrix::<f64, 9, DIM>::zeros();
            let mut jb = SMatrix::<f64, 9, DIM>::zeros();
            for i in 0..DIM {
                let (ap, am) = (a.nudged(i, JAC_STEP), a.nudged(i, -JAC_STEP));
                let d = if i >= 9 {
                    let (pp, pm) = (preint_of(&f.samples, &ap.bias()), preint_of(&f.samples, &am.bias()));
                    self.imu_residual(f, &ap, b, &pp) - self.imu_residual(f, &am, b, &pm)
                } else {
                    self.imu_residual(f, &ap, b, &pre) - self.imu_residual(f, &am, b, &pre)
                };
                ja.set_column(i, &(d / h2));
                let d = self.imu_residual(f, a, &b.nudged(i, JAC_STEP), &pre) - self.imu_residual(f, a, &b.nudged(i, -JAC_STEP), &pre);
                jb.set_column(i, &(d / h2));
            }
            let jaa = ja.transpose() * ja;
            h.diag[f.k] += jaa;
            next[f.k] += jaa;
            h.diag[f.k + 1] += jb.transpose() * jb;
            h.upper[f.k] += ja.transpose() * jb;
            g[f.k] += ja.transpose() * r;
            g[f.k + 1] += jb.transpose() * r;
        }

        for f in &self.tps {
            let a = &x[f.k];
            let pre = preint_of(&f.samples, &a.bias());
            let r = self.tps_residual(f, a, &pre);
            let mut j = SMatrix::<f64, 3, DIM>::zeros();
            for i in 0..DIM {
                let (ap, am) = (a.nudged(i, JAC_STEP), a.nudged(i, -JAC_STEP));
                let d = if i >= 9 {
                    self.tps_residual(f, &ap, &preint_of(&f.samples, &ap.bias()))
                        - self.tps_residual(f, &am, &preint_of(&f.samples, &am.bias()))
                } else {
                    self.tps_residual(f, &ap, &pre) - self.tps_residual(f, &am, &pre)
                };
                j.set_column(i, &(d / h2));
            }
            h.diag[f.k] += j.transpose() * j;
            g[f.k] += j.transpose() * r;
        }

        for k in 0..n - 1 {
            let s = self.bias_dt[k].sqrt();
            let r = self.bias_residual(k, &x[k], &x[k + 1]);
            let mut jb = SMatrix::<f64, 6, DIM>::zeros();
            for i in 0..3 {
                jb[(i, 9 + i)] = self.bias_w.0 / s;
                jb[(3 + i, 12 + i)] = self.bias_w.1 / s;
            }
            let ja = -jb;
            let jaa = ja.transpose() * ja;
            h.diag[k] += jaa;
            next[k] += jaa;
            h.diag[k + 1] += jb.transpose() * jb;
            h.upper[k] += ja.transpose() * jb;
            g[k] += ja.transpose() * r;
            g[k + 1] += jb.transpose() * r;
        }
        (h, g, next)
    }
}

fn grad_norm(g: &[V15]) -> f64 {
    g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

fn solve_lm(p: &Problem, mut x: Vec<KState>, cfg: &LmConfig) -> Result<(Vec<KState>, LmReport)> {
    let mut cost = p.cost(&x);
    let initial_cost = cost;
    let mut lambda = cfg.lambda0;
    let mut g0 = None;
    let mut iterations = 0;
    let mut gnorm = f64::INFINITY;
    while iterations < cfg.max_iterations {
        let (h, g, _) = p.linearize(&x);
        gnorm = grad_norm(&g);
        let g0v = *g0.get_or_insert(gnorm);
        if gnorm <= cfg.gradient_tolerance * g0v {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        let mut tiny_step = false;
        while lambda < 1e16 {
            let mut damped = h.clone();
            for d in damped.diag.iter_mut() {
                for i in 0..DIM {
                    d[(i, i)] += lambda * d[(i, i)].max(1e-12);
                }
            }
            let rhs: Vec<V15> = g.iter().map(|v| -v).collect();
            let step = match damped.solve(&rhs) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= cfg.lambda_up;
                    continue;
                }
            };
            let step_norm = grad_norm(&step);
            let cand: Vec<KState> = x.iter().zip(&step).map(|(s, d)| s.retract(d)).collect();
            let c = p.cost(&cand);
            if c.is_finite() && c < cost {
                x = cand;
                cost = c;
                lambda = (lambda / cfg.lambda_down).max(1e-12);
                accepted = true;
                tiny_step = step_norm < cfg.step_tolerance;
                break;
            }
            if step_norm < cfg.step_tolerance {
                tiny_step = true;
                break;
            }
            lambda *= cfg.lambda_up;
        }
        if !accepted || tiny_step {
            let (_, g, _) = p.linearize(&x);
            gnorm = grad_norm(&g);
            break;
        }
    }
    if iterations == cfg.max_iterations {
        let (_, g, _) = p.linearize(&x);
        gnorm = grad_norm(&g);
    }
    let g0 = g0.unwrap_or(gnorm);
    let converged = gnorm <= cfg.gradient_tolerance * g0;
    if !converged {
        log::warn!("fusion did not converge: gradient {gnorm:.3e} vs initial {g0:.3e} after {iterations} iterations");
    }
    Ok((
        x,
        LmReport {
            iterations,
            converged,
            initial_cost,
            final_cost: cost,
            initial_gradient_norm: g0,
            final_gradient_norm: gnorm,
            final_lambda: lambda,
        },
    ))
}

/// Linear interpolation of the position stream; `None` across detected gaps
/// or outside the stream.
fn tps_at(tps: &PositionSeries, gaps: &[(Timestamp, Timestamp)], t: Timestamp) -> Option<Vector3<f64>> {
    let s = tps.samples();
    let i = s.partition_point(|x| x.0 < t);
    if i < s.len() && s[i].0 == t {
        return Some(s[i].1);
    }
    if i == 0 || i == s.len() {
        return None;
    }
    let (a, b) = (&s[i - 1], &s[i]);
    if gaps.iter().any(|&(gs, ge)| gs == a.0 && ge == b.0) {
        return None;
    }
    let u = t.secs_since(a.0) / b.0.secs_since(a.0);
    Some(a.1 + (b.1 - a.1) * u)
}

/// Constant yaw that best maps gyro-integrated, yaw-free body accelerations
/// onto TPS-derived prism accelerations (horizontal components).
fn estimate_yaw(
    tps: &PositionSeries,
    gaps: &[(Timestamp, Timestamp)],
    imu: &[ImuSample],
    r0: &[UnitQuaternion<f64>],
    prism: &Vector3<f64>,
) -> Option<f64> {
    const HALF: f64 = 0.25;
    let times: Vec<f64> = imu.iter().map(|s| s.t.as_secs_f64()).collect();
    // yaw-free world specific force of the prism at each IMU sample
    let n = imu.len();
    let accel_w: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let alpha = if hi > lo { (imu[hi].gyro - imu[lo].gyro) / (times[hi] - times[lo]) } else { Vector3::zeros() };
            let w = imu[i].gyro;
            let lever = w.cross(&w.cross(prism)) + alpha.cross(prism);
            r0[i] * (imu[i].accel + lever)
        })
        .collect();
    let (mut sc, mut ss, mut excitation, mut count) = (0.0, 0.0, 0.0, 0usize);
    for &(t, _) in tps.samples() {
        let (tm, tp) = (t.offset_secs(-HALF), t.offset_secs(HALF));
        let (Some(pm), Some(p0), Some(pp)) = (tps_at(tps, gaps, tm), tps_at(tps, gaps, t), tps_at(tps, gaps, tp)) else {
            continue;
        };
        if gaps.iter().any(|&(gs, ge)| gs < tp && ge > tm) {
            continue;
        }
        let ts = t.as_secs_f64();
        let (i0, i1) = (times.partition_point(|&x| x < ts - HALF), times.partition_point(|&x| x <= ts + HALF));
        if i0 == 0 || i1 >= n || i1 <= i0 {
            continue;
        }
        // triangular kernel matches the second difference of positions
        let (mut acc, mut wsum) = (Vector3::zeros(), 0.0);
        for i in i0..i1 {
            let w = 1.0 - (times[i] - ts).abs() / HALF;
            acc += accel_w[i] * w;
            wsum += w;
        }
        let b = acc / wsum;
        let a = (pp - 2.0 * p0 + pm) / (HALF * HALF);
        sc += b.x * a.x + b.y * a.y;
        ss += b.x * a.y - b.y * a.x;
        excitation += b.xy().norm();
        count += 1;
    }
    if count == 0 || excitation / (count as f64) < 0.05 {
        return None;
    }
    Some(ss.atan2(sc))
}

/// Batch fusion of prism positions and IMU data.
///
/// Keyframes sit on IMU samples at `keyframe_hz`. Each TPS measurement is
/// bound to the latest keyframe at or before it and predicted forward to the
/// measurement time by preintegration, so no measurement is attributed to a
/// keyframe at a different time.
pub fn fuse_tps_imu(
    tps: &PositionSeries,
    imu: &ImuSeries,
    prism_in_body: &Vector3<f64>,
    cfg: &FusionConfig,
) -> Result<FusedTrajectory> {
    if !(cfg.keyframe_hz.is_finite() && cfg.keyframe_hz > 0.0) {
        return Err(Error::Parameter(format!("keyframe rate must be > 0, got {}", cfg.keyframe_hz)));
    }
    if imu.rate_hz < 5.0 * cfg.keyframe_hz {
        return Err(Error::Parameter(format!(
            "IMU rate {} Hz is below 5x the keyframe rate {} Hz",
            imu.rate_hz, cfg.keyframe_hz
        )));
    }
    if tps.len() < 2 {
        return Err(Error::Data("need at least two TPS samples".into()));
    }
    let gravity = Vector3::from(cfg.gravity);
    let ts = tps.samples();
    let is = imu.samples();
    let (Some(i_start), Some(i_end)) = (imu.start(), imu.end()) else {
        return Err(Error::Data("empty IMU series".into()));
    };
    let t0 = ts[0].0.max(i_start);
    let t1 = ts[ts.len() - 1].0.min(i_end);
    let period = 1.0 / cfg.keyframe_hz;
    if t1.secs_since(t0) < 2.0 * period {
        return Err(Error::Data(format!("TPS and IMU overlap only {:.3} s", t1.secs_since(t0).max(0.0))));
    }
    let gaps = detect_dropouts(tps, cfg.gap_factor)?;

    // keyframes on IMU samples
    let mut kf_idx: Vec<usize> = Vec::new();
    let span = t1.secs_since(t0);
    let steps = (span / period + 1e-9).floor() as usize;
    for k in 0..=steps {
        let t = t0.offset_secs(k as f64 * period);
        let j = is.partition_point(|s| s.t < t).min(is.len() - 1);
        let j = if j > 0 && (is[j].t > t1 || (is[j].t - t).abs() > (t - is[j - 1].t).abs()) { j - 1 } else { j };
        if is[j].t < t0 && j + 1 < is.len() {
            continue;
        }
        if kf_idx.last().is_none_or(|&l| j > l) {
            kf_idx.push(j);
        }
    }
    if kf_idx.len() < 2 {
        return Err(Error::Data("fewer than two keyframes".into()));
    }
    let kf_t: Vec<Timestamp> = kf_idx.iter().map(|&j| is[j].t).collect();
    let n = kf_idx.len();
    let noise = cfg.noise.floored();
    let density = NoiseDensity { gyro: noise.gyro_density, accel: noise.accel_density };

    let mut imu_factors = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let samples = is[kf_idx[k]..=kf_idx[k + 1]].to_vec();
        let pre = preintegrate_with_noise(&samples, &ImuBias::zero(), Some(&density))?;
        let cov = pre.cov + M9::identity() * 1e-18;
        let l = cov.cholesky().ok_or_else(|| Error::Rank(format!("IMU factor {k} covariance not SPD")))?;
        let sqrt_info = l.l().try_inverse().ok_or_else(|| Error::Rank("singular IMU covariance".into()))?;
        imu_factors.push(ImuFactor { k, samples, sqrt_info });
    }
    let mut tps_factors = Vec::new();
    let mut per_kf = vec![0usize; n];
    for &(t, m) in ts {
        if t < kf_t[0] || t > kf_t[n - 1] {
            continue;
        }
        let k = kf_t.partition_point(|&s| s <= t) - 1;
        let samples = if t == kf_t[k] { vec![is[kf_idx[k]]] } else { segment_samples(imu, kf_t[k], t)? };
        per_kf[k] += 1;
        tps_factors.push(TpsFactor { k, samples, m });
    }
    let sigma = tps.sigma_m.max(cfg.min_tps_sigma_m);

    // initialisation: roll/pitch from gravity, gyro-integrated attitude,
    // yaw from matching accelerations, positions from TPS
    let first = kf_idx[0];
    let avg_end = is.partition_point(|s| s.t <= is[first].t.offset_secs(0.5)).max(first + 1);
    let f_mean = is[first..avg_end].iter().map(|s| s.accel).sum::<Vector3<f64>>() / (avg_end - first) as f64;
    let r_start = UnitQuaternion::rotation_between(&f_mean, &Vector3::z()).unwrap_or_else(UnitQuaternion::identity);
    let last = kf_idx[n - 1];
    let mut r0 = Vec::with_capacity(last - first + 1);
    r0.push(r_start);
    for w in is[first..=last].windows(2) {
        let dt = w[1].t.secs_since(w[0].t);
        let prev = r0[r0.len() - 1];
        r0.push(prev * so3_exp(&(0.5 * (w[0].gyro + w[1].gyro) * dt)));
    }
    let yaw = estimate_yaw(tps, &gaps, &is[first..=last], &r0, prism_in_body).unwrap_or_else(|| {
        log::warn!("insufficient horizontal excitation to initialise yaw; starting from 0");
        0.0
    });
    let r_yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    let mut x: Vec<KState> = kf_idx
        .iter()
        .map(|&j| KState {
            r: r_yaw * r0[j - first],
            p: Vector3::zeros(),
            v: Vector3::zeros(),
            bg: Vector3::zeros(),
            ba: Vector3::zeros(),
        })
        .collect();
    let known: Vec<Option<Vector3<f64>>> =
        (0..n).map(|k| tps_at(tps, &gaps, kf_t[k]).map(|m| m - x[k].r * prism_in_body)).collect();
    for k in 0..n {
        if let Some(p) = known[k] {
            x[k].p = p;
        }
    }
    for k in 0..n {
        if known[k].is_none() {
            continue;
        }
        let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
        if let (Some(pa), Some(pb)) = (known[a], known[b]) {
            if b > a {
                x[k].v = (pb - pa) / kf_t[b].secs_since(kf_t[a]);
            }
        }
    }
    // bridge unknown runs by dead reckoning, closing the gap linearly
    let mut k = 0;
    while k < n {
        if known[k].is_some() {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && known[k].is_none() {
            k += 1;
        }
        let anchor = start.saturating_sub(1);
        let mut pred = Vec::new();
        let (mut p, mut v) = (x[anchor].p, x[anchor].v);
        for j in anchor..k.min(n - 1) {
            let pre = preint_of(&imu_factors[j].samples, &ImuBias::zero());
            let (_, pn, vn) = pre.predict(&x[j].r, &p, &v, &gravity);
            p = pn;
            v = vn;
            pred.push((j + 1, p, v));
        }
        let close = if k < n { Some(x[k].p - pred[pred.len() - 1].1) } else { None };
        let total = if k < n { kf_t[k].secs_since(kf_t[anchor]) } else { 1.0 };
        for (j, p, v) in pred {
            if j == k && k < n {
                continue;
            }
            let u = kf_t[j].secs_since(kf_t[anchor]) / total;
            x[j].p = p + close.map_or(Vector3::zeros(), |c| c * u);
            x[j].v = v + close.map_or(Vector3::zeros(), |c| c / total);
        }
    }
    if known[0].is_none() {
        log::warn!("first keyframe has no TPS support");
    }

    let pr = &cfg.prior;
    let problem = Problem {
        gravity,
        prism: *prism_in_body,
        tps_w: 1.0 / sigma,
        bias_w: (1.0 / noise.gyro_bias_rw, 1.0 / noise.accel_bias_rw),
        bias_dt: (0..n - 1).map(|k| kf_t[k + 1].secs_since(kf_t[k])).collect(),
        prior_state: x[0],
        prior_w: [
            1.0 / pr.rotation_rad,
            1.0 / pr.position_m,
            1.0 / pr.velocity_mps,
            1.0 / pr.gyro_bias,
            1.0 / pr.accel_bias,
        ],
        imu: imu_factors,
        tps: tps_factors,
    };
    let (x, report) = solve_lm(&problem, x, &cfg.lm)?;

    let (h, _, next) = problem.linearize(&x);
    let (smoothed, filtered) = h.marginals(&next)?;
    let sig = |c: &M15| Vector3::new(c[(3, 3)].sqrt(), c[(4, 4)].sqrt(), c[(5, 5)].sqrt());
    let yaw_sigma: Vec<f64> = x
        .iter()
        .zip(&smoothed)
        .map(|(s, c)| {
            let r: Matrix3<f64> = s.r.to_rotation_matrix().into_inner();
            let cw = r * c.fixed_view::<3, 3>(0, 0) * r.transpose();
            cw[(2, 2)].max(0.0).sqrt()
        })
        .collect();
    let states: Vec<NavState> = x
        .iter()
        .zip(&kf_t)
        .map(|(s, &t)| NavState::new(t, s.r, s.p, s.v, s.bias()))
        .collect();
    let trajectory = Trajectory::new("world", "body", states.iter().map(|s| (s.t, s.pose.clone())).collect())?;
    Ok(FusedTrajectory {
        trajectory,
        position_sigma: smoothed.iter().map(sig).collect(),
        filtered_position_sigma: filtered.iter().map(sig).collect(),
        weak_yaw: yaw_sigma.iter().map(|&s| s > cfg.weak_yaw_sigma_rad).collect(),
        yaw_sigma_rad: yaw_sigma,
        states,
        dropouts: gaps,
        measurements_per_keyframe: per_kf,
        report,
        gravity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_imu, simulate_tps, AnalyticTrajectory, ClockModel};

    fn prism() -> Vector3<f64> {
        Vector3::new(0.1, -0.05, 0.3)
    }

    #[test]
    fn noiseless_inputs_reproduce_truth() {
        let traj = AnalyticTrajectory::walking(6.0);
        let imu = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 200.0).unwrap();
        let tps = simulate_tps(&traj, &prism(), 20.0, 0.0, &[], 0).unwrap();
        let fused = fuse_tps_imu(&tps, &imu, &prism(), &FusionConfig::default()).unwrap();
        assert!(fused.report.converged, "{:?}", fused.report);
        for &(t, m) in tps.samples() {
            let pose = fused.pose_at(&imu, t).unwrap();
            let e = (pose.transform_point(&prism()) - m).norm();
            assert!(e < 1e-6, "{t}: {e}");
        }
    }

    #[test]
    fn yaw_initialisation_recovers_heading() {
        let mut traj = AnalyticTrajectory::walking(8.0);
        traj.rotation[2].offset = 2.0;
        let imu = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 200.0).unwrap();
        let tps = simulate_tps(&traj, &prism(), 20.0, 0.0, &[], 0).unwrap();
        let fused = fuse_tps_imu(&tps, &imu, &prism(), &FusionConfig::default()).unwrap();
        let st = &fused.states[fused.states.len() / 2];
        assert!(st.rotation().angle_to(&traj.rotation(st.t.as_secs_f64())) < 1e-3);
    }

    #[test]
    fn rejects_slow_imu_and_short_overlap() {
        let traj = AnalyticTrajectory::walking(3.0);
        let imu = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::ideal(), 40.0).unwrap();
        let tps = simulate_tps(&traj, &prism(), 20.0, 0.0, &[], 0).unwrap();
        assert!(matches!(fuse_tps_imu(&tps, &imu, &prism(), &FusionConfig::default()), Err(Error::Parameter(_))));
        let imu = simulate_imu(&traj, &ImuNoiseModel::noiseless(), &ClockModel::offset_ms(2900.0), 200.0).unwrap();
        assert!(matches!(fuse_tps_imu(&tps, &imu, &prism(), &FusionConfig::default()), Err(Error::Data(_))));
    }
}
