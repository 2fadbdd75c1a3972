//! Trajectory association, rigid alignment and ATE/RTE metrics.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Timestamp};
use crate::trajectory::Trajectory;

pub const DEFAULT_MAX_DT_MS: f64 = 10.0;

/// Nearest-in-time matching with unique partners. Candidate pairs are taken
/// from each est sample's nearest ref sample, accepted greedily in order of
/// increasing |dt|, and discarded beyond `max_dt_ms`. Returned sorted by est
/// index.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt_ms: f64) -> Result<Vec<(usize, usize)>> {
    if est.is_empty() || reference.is_empty() {
        return Err(Error::Data("cannot associate an empty trajectory".into()));
    }
    let max_dt = (max_dt_ms * 1e6).round() as i64;
    let rs = reference.stamps();
    let mut cand: Vec<(i64, usize, usize)> = est
        .stamps()
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            let k = rs.partition_point(|&r| r < t);
            let best = [k.checked_sub(1), (k < rs.len()).then_some(k)]
                .into_iter()
                .flatten()
                .min_by_key(|&j| ((rs[j] - t).abs(), j))?;
            let dt = (rs[best] - t).abs();
            (dt <= max_dt).then_some((dt, i, best))
        })
        .collect();
    cand.sort();
    let mut used = vec![false; rs.len()];
    let mut pairs: Vec<(usize, usize)> = cand
        .into_iter()
        .filter(|&(_, _, j)| !std::mem::replace(&mut used[j], true))
        .map(|(_, i, j)| (i, j))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(format!("no timestamp pairs within {max_dt_ms} ms")));
    }
    pairs.sort();
    Ok(pairs)
}

/// Similarity transform `ref ≈ scale·R·est + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Alignment { rotation: UnitQuaternion::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Rigid part as a pose from the est frame into the ref frame.
    pub fn to_pose(&self, ref_frame: &str, est_frame: &str) -> Pose {
        Pose::new(ref_frame, est_frame, self.rotation, self.translation)
    }
}

/// Least-squares rigid (or similarity) alignment of corresponding points.
pub fn umeyama_align(est: &[Vector3<f64>], reference: &[Vector3<f64>], with_scale: bool) -> Result<Alignment> {
    if est.len() != reference.len() {
        return Err(Error::Data(format!("{} est vs {} ref points", est.len(), reference.len())));
    }
    if est.len() < 3 {
        return Err(Error::Rank(format!("need at least 3 point pairs, got {}", est.len())));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mu_r = reference.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let (de, dr) = (e - mu_e, r - mu_r);
        cov += dr * de.transpose();
        scatter += de * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;
    let sv = scatter.symmetric_eigenvalues();
    let (lo, hi) = (sv.min(), sv.max());
    // sorted eigenvalues: need at least two directions of spread
    let mid = sv.sum() - lo - hi;
    if hi <= 0.0 || mid <= 1e-12 * hi {
        return Err(Error::Rank("points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("computed"), svd.v_t.expect("computed"));
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rot = u * s * vt;
    let scale = if with_scale {
        (svd.singular_values.component_mul(&s.diagonal())).sum() / var_e
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_matrix(&rot);
    let translation = mu_r - scale * (rotation * mu_e);
    Ok(Alignment { rotation, translation, scale })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub metric: String,
    pub align: bool,
    pub max_dt_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub rmse: f64,
    pub median: f64,
    pub max: f64,
    pub count: usize,
    pub params: MetricParams,
    /// Per-pair error with the est timestamp (ATE) or segment start (RTE).
    #[serde(skip)]
    pub errors: Vec<(Timestamp, f64)>,
}

impl MetricReport {
    fn from_errors(errors: Vec<(Timestamp, f64)>, params: MetricParams) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Data(format!("no {} error samples", params.metric)));
        }
        let v: Vec<f64> = errors.iter().map(|e| e.1).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let rmse = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
        Ok(MetricReport { mean, std, rmse, median, max: sorted[m - 1], count: m, params, errors })
    }

    pub fn errors_csv(&self) -> String {
        let mut s = String::from("t_ns,error_m\n");
        for (t, e) in &self.errors {
            s.push_str(&format!("{},{}\n", t.nanos(), e));
        }
        s
    }
}

/// Absolute translational error after optional rigid Umeyama alignment of
/// est onto ref.
pub fn ate(est: &Trajectory, reference: &Trajectory, align: bool, max_dt_ms: f64) -> Result<MetricReport> {
    let pairs = associate(est, reference, max_dt_ms)?;
    let pe: Vec<_> = pairs.iter().map(|&(i, _)| *est.poses()[i].translation()).collect();
    let pr: Vec<_> = pairs.iter().map(|&(_, j)| *reference.poses()[j].translation()).collect();
    let al = if align { umeyama_align(&pe, &pr, false)? } else { Alignment::identity() };
    let errors = pairs
        .iter()
        .zip(pe.iter().zip(&pr))
        .map(|(&(i, _), (e, r))| (est.stamps()[i], (r - al.apply(e)).norm()))
        .collect();
    MetricReport::from_errors(errors, MetricParams { metric: "ate".into(), align, max_dt_ms, delta_m: None })
}

/// Relative translational error over segments of `delta_m` travelled along
/// the reference. For each associated ref pose i the segment ends at the
/// first later pose j with path(j) − path(i) ≥ delta_m; the error is the
/// translation of (ref_i⁻¹·ref_j)⁻¹·(est_i⁻¹·est_j).
pub fn rte(est: &Trajectory, reference: &Trajectory, delta_m: f64, max_dt_ms: f64) -> Result<MetricReport> {
    if !(delta_m.is_finite() && delta_m > 0.0) {
        return Err(Error::Parameter(format!("delta_m must be > 0, got {delta_m}")));
    }
    let pairs = associate(est, reference, max_dt_ms)?;
    let e: Vec<_> = pairs.iter().map(|&(i, _)| est.poses()[i].to_isometry()).collect();
    let r: Vec<_> = pairs.iter().map(|&(_, j)| reference.poses()[j].to_isometry()).collect();
    let mut path = vec![0.0];
    for w in r.windows(2) {
        let d = (w[1].translation.vector - w[0].translation.vector).norm();
        path.push(path[path.len() - 1] + d);
    }
    if path[path.len() - 1] + 1e-9 < delta_m {
        return Err(Error::Data(format!(
            "reference path {:.3} m is shorter than delta {delta_m} m",
            path[path.len() - 1]
        )));
    }
    let mut errors = Vec::new();
    let mut j = 0;
    for i in 0..r.len() {
        j = j.max(i + 1);
        while j < r.len() && path[j] - path[i] < delta_m - 1e-9 {
            j += 1;
        }
        if j >= r.len() {
            break;
        }
        let dr = r[i].inverse() * r[j];
        let de = e[i].inverse() * e[j];
        let err = dr.inverse() * de;
        errors.push((est.stamps()[pairs[i].0], err.translation.vector.norm()));
    }
    MetricReport::from_errors(
        errors,
        MetricParams { metric: "rte".into(), align: false, max_dt_ms, delta_m: Some(delta_m) },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Isometry3;
    use proptest::prelude::*;

    fn line(n: usize, rate: f64, speed: f64, offset_ns: i64) -> Trajectory {
        Trajectory::from_isometries(
            "world",
            "body",
            (0..n).map(|k| {
                let t = k as f64 / rate;
                (Timestamp::from_secs_f64(t) + offset_ns, Isometry3::translation(speed * t, 0.0, 0.0))
            }),
        )
        .unwrap()
    }

    fn wiggly(seed: u64) -> Trajectory {
        let a = 0.3 + (seed % 7) as f64 * 0.1;
        Trajectory::from_isometries(
            "world",
            "body",
            (0..300).map(|k| {
                let t = k as f64 * 0.05;
                let iso = Isometry3::new(
                    Vector3::new(t, a * (0.7 * t).sin(), 0.2 * (1.3 * t).cos()),
                    Vector3::new(0.1 * t.sin(), 0.05 * t, a * t.cos()),
                );
                (Timestamp::from_secs_f64(t), iso)
            }),
        )
        .unwrap()
    }

    #[test]
    fn associate_identical_and_offset_grids() {
        let a = line(50, 10.0, 1.0, 0);
        assert_eq!(associate(&a, &a, 10.0).unwrap(), (0..50).map(|i| (i, i)).collect::<Vec<_>>());
        let est = line(50, 10.0, 1.0, 3_000_000);
        let reference = line(100, 20.0, 1.0, 0);
        let pairs = associate(&est, &reference, 10.0).unwrap();
        assert_eq!(pairs.len(), 50);
        for (i, j) in pairs {
            assert_eq!((est.stamps()[i] - reference.stamps()[j]).abs(), 3_000_000);
        }
    }

    #[test]
    fn associate_matches_are_unique() {
        // two est samples nearest to the same ref sample
        let est = Trajectory::from_isometries(
            "w",
            "b",
            [(Timestamp(0), Isometry3::identity()), (Timestamp(2_000_000), Isometry3::identity())],
        )
        .unwrap();
        let reference = Trajectory::from_isometries("w", "b", [(Timestamp(1_500_000), Isometry3::identity())]).unwrap();
        assert_eq!(associate(&est, &reference, 10.0).unwrap(), vec![(1, 0)]);
    }

    #[test]
    fn disjoint_ranges_fail() {
        let a = line(10, 10.0, 1.0, 0);
        let b = line(10, 10.0, 1.0, 5_000_000_000);
        assert!(matches!(associate(&a, &b, 10.0), Err(Error::Data(_))));
    }

    #[test]
    fn umeyama_identity_and_scale() {
        let pts: Vec<_> = (0..10).map(|k| Vector3::new(k as f64, (k * k) as f64 * 0.1, (k as f64).sin())).collect();
        let al = umeyama_align(&pts, &pts, true).unwrap();
        assert!(al.rotation.angle() < 1e-12 && al.translation.norm() < 1e-12);
        assert!((al.scale - 1.0).abs() < 1e-12);
        let doubled: Vec<_> = pts.iter().map(|p| 2.0 * p).collect();
        let al = umeyama_align(&doubled, &pts, true).unwrap();
        assert!((al.scale - 0.5).abs() < 1e-9);
    }

    #[test]
    fn umeyama_rejects_collinear() {
        let pts: Vec<_> = (0..10).map(|k| Vector3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        assert!(matches!(umeyama_align(&pts, &pts, false), Err(Error::Rank(_))));
    }

    #[test]
    fn umeyama_noise_residual_scale() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = Normal::new(0.0, 0.01).unwrap();
        let reference: Vec<_> = (0..2000).map(|k| Vector3::new((k % 13) as f64, (k % 7) as f64, (k % 5) as f64)).collect();
        let est: Vec<_> = reference
            .iter()
            .map(|p| p + Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)))
            .collect();
        let al = umeyama_align(&est, &reference, false).unwrap();
        let rmse = (reference.iter().zip(&est).map(|(r, e)| (r - al.apply(e)).norm_squared()).sum::<f64>()
            / est.len() as f64)
            .sqrt();
        // per-point 3-D noise norm has rms σ·√3
        let expected = 0.01 * 3f64.sqrt();
        assert!((rmse / expected - 1.0).abs() < 0.2, "{rmse}");
    }

    #[test]
    fn ate_constant_offset() {
        let reference = wiggly(1);
        let shifted = reference.transformed(&Pose::new("world", "world", UnitQuaternion::identity(), Vector3::new(0.1, 0.0, 0.0)), &Pose::identity("body", "body")).unwrap();
        let r = ate(&shifted, &reference, false, 10.0).unwrap();
        assert!((r.mean - 0.1).abs() < 1e-12 && r.std < 1e-12);
        let r = ate(&shifted, &reference, true, 10.0).unwrap();
        assert!(r.mean < 1e-9, "{}", r.mean);
    }

    #[test]
    fn rte_scale_error_on_straight_line() {
        let reference = line(2001, 100.0, 1.0, 0);
        let est = Trajectory::from_isometries(
            "world",
            "body",
            reference.iter().map(|(t, p)| (t, Isometry3::translation(1.01 * p.translation().x, 0.0, 0.0))),
        )
        .unwrap();
        let r = rte(&est, &reference, 1.0, 10.0).unwrap();
        assert!((r.mean - 0.010).abs() < 5e-4, "{}", r.mean);
        assert_eq!(r.count, 1901);
    }

    #[test]
    fn rte_needs_enough_path() {
        let reference = line(10, 10.0, 0.1, 0);
        assert!(matches!(rte(&reference, &reference, 1.0, 10.0), Err(Error::Data(_))));
    }

    #[test]
    fn metric_report_statistics() {
        let errs = [1.0, 2.0, 3.0, 4.0].iter().enumerate().map(|(i, &e)| (Timestamp(i as i64), e)).collect();
        let r = MetricReport::from_errors(errs, MetricParams { metric: "ate".into(), align: false, max_dt_ms: 10.0, delta_m: None }).unwrap();
        assert_eq!((r.mean, r.median, r.max, r.count), (2.5, 2.5, 4.0, 4));
        assert!((r.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((r.rmse - 7.5f64.sqrt()).abs() < 1e-15);
    }

    fn rigid() -> impl Strategy<Value = Isometry3<f64>> {
        (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform3(-3.0..3.0f64))
            .prop_map(|(t, r)| Isometry3::new(Vector3::from(t), Vector3::from(r)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn self_metrics_are_zero(seed in 0u64..1000) {
            let x = wiggly(seed);
            prop_assert!(ate(&x, &x, true, 10.0).unwrap().max < 1e-12);
            prop_assert!(ate(&x, &x, false, 10.0).unwrap().max == 0.0);
            prop_assert!(rte(&x, &x, 1.0, 10.0).unwrap().max < 1e-12);
        }

        #[test]
        fn umeyama_recovers_inverse(t in rigid()) {
            let reference: Vec<_> = (0..20).map(|k| {
                let k = k as f64;
                Vector3::new(k.sin() * 3.0, (0.7 * k).cos() * 2.0, 0.1 * k)
            }).collect();
            let est: Vec<_> = reference.iter().map(|p| t.transform_point(&(*p).into()).coords).collect();
            let al = umeyama_align(&est, &reference, false).unwrap();
            let inv = t.inverse();
            prop_assert!(al.rotation.angle_to(&inv.rotation) < 1e-9);
            prop_assert!((al.translation - inv.translation.vector).norm() < 1e-9);
        }

        #[test]
        fn metrics_invariant_to_rigid_transform(t in rigid(), seed in 0u64..50) {
            let reference = wiggly(seed);
            let est = Trajectory::from_isometries("world", "body", reference.iter().map(|(ts, p)| {
                let iso = p.to_isometry();
                let noisy = Isometry3::new(iso.translation.vector + Vector3::new(0.01 * (ts.as_secs_f64() * 3.0).sin(), 0.0, 0.0), iso.rotation.scaled_axis());
                (ts, noisy)
            })).unwrap();
            let moved = Trajectory::from_isometries("world", "body", est.iter().map(|(ts, p)| (ts, t * p.to_isometry()))).unwrap();
            let a0 = ate(&est, &reference, true, 10.0).unwrap();
            let a1 = ate(&moved, &reference, true, 10.0).unwrap();
            prop_assert!((a0.mean - a1.mean).abs() < 1e-9);
            let r0 = rte(&est, &reference, 1.0, 10.0).unwrap();
            let r1 = rte(&moved, &reference, 1.0, 10.0).unwrap();
            prop_assert!((r0.mean - r1.mean).abs() < 1e-9);
            let moved_ref = Trajectory::from_isometries("world", "body", reference.iter().map(|(ts, p)| (ts, t * p.to_isometry()))).unwrap();
            let r2 = rte(&est, &moved_ref, 1.0, 10.0).unwrap();
            prop_assert!((r0.mean - r2.mean).abs() < 1e-9);
        }
    }
}
