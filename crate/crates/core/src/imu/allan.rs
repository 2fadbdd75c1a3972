//! Overlapping Allan deviation and noise-parameter identification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of non-overlapping clusters required at a tau.
pub const MIN_CLUSTERS: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllanPoint {
    pub tau_s: f64,
    pub adev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllanCurve {
    pub channel: String,
    /// Strictly increasing in tau. Deviations are >= 0; a constant signal
    /// yields exact zeros.
    pub points: Vec<AllanPoint>,
}

impl AllanCurve {
    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau_s).collect()
    }

    pub fn adevs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.adev).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_s,adev\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.tau_s, p.adev));
        }
        s
    }
}

/// `per_decade` log-spaced taus from one sample period up to the longest tau
/// that still leaves [`MIN_CLUSTERS`] clusters.
pub fn log_spaced_taus(n_samples: usize, rate_hz: f64, per_decade: usize) -> Vec<f64> {
    let t0 = 1.0 / rate_hz;
    let max_m = n_samples / MIN_CLUSTERS;
    if max_m < 1 || per_decade == 0 {
        return Vec::new();
    }
    let decades = (max_m as f64).log10();
    let steps = (decades * per_decade as f64).floor() as usize;
    let mut ms: Vec<usize> = (0..=steps)
        .map(|k| 10f64.powf(k as f64 / per_decade as f64).round() as usize)
        .collect();
    ms.dedup();
    ms.into_iter().map(|m| m as f64 * t0).collect()
}

/// Overlapping Allan deviation of a uniformly sampled channel.
///
/// For cluster size m = round(τ·rate) the cluster averages ȳ_k are taken at
/// every sample offset and σ²(τ) = Σ(ȳ_{k+m} − ȳ_k)² / (2·(N − 2m + 1)).
/// Taus that leave fewer than [`MIN_CLUSTERS`] clusters, or round to the same
/// cluster size as an earlier tau, are dropped with a warning.
pub fn allan_deviation(channel: &str, samples: &[f64], rate_hz: f64, taus: &[f64]) -> Result<AllanCurve> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::Parameter(format!("invalid rate {rate_hz}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample".into()));
    }
    let n = samples.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    // Compensated summation keeps long-series cluster means accurate.
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in samples {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
        cum.push(s);
    }
    let mut points: Vec<AllanPoint> = Vec::new();
    let mut last_m = 0usize;
    for &tau in taus {
        let m = (tau * rate_hz).round() as usize;
        if m == 0 || n / m < MIN_CLUSTERS {
            log::warn!("allan: tau {tau} s dropped (too few clusters for {n} samples)");
            continue;
        }
        if m <= last_m {
            log::warn!("allan: tau {tau} s dropped (cluster size {m} not increasing)");
            continue;
        }
        last_m = m;
        let mf = m as f64;
        let terms = n - 2 * m + 1;
        let mut acc = 0.0;
        for k in 0..terms {
            let d = (cum[k + 2 * m] - 2.0 * cum[k + m] + cum[k]) / mf;
            acc += d * d;
        }
        let avar = acc / (2.0 * terms as f64);
        points.push(AllanPoint { tau_s: mf / rate_hz, adev: avar.sqrt() });
    }
    if points.is_empty() {
        return Err(Error::Data(format!("series of {n} samples too short for every requested tau")));
    }
    Ok(AllanCurve { channel: channel.to_string(), points })
}

/// Least-squares slope of log σ against log τ over the points with
/// `lo <= τ <= hi`.
pub fn loglog_slope(curve: &AllanCurve, lo: f64, hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.tau_s >= lo * (1.0 - 1e-9) && p.tau_s <= hi * (1.0 + 1e-9) && p.adev > 0.0)
        .map(|p| (p.tau_s.ln(), p.adev.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!("fewer than two positive points in [{lo}, {hi}]")));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("degenerate tau range".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Accepted deviation of a local log-log slope from −1/2.
    pub slope_tolerance: f64,
    /// Minimum tau span covered by the curve, decades.
    pub min_decades: f64,
    /// Minimum number of consecutive points in the −1/2 region.
    pub min_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { slope_tolerance: 0.1, min_decades: 3.0, min_points: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// White-noise density (σ of the −1/2 line at τ = 1 s), units/√Hz.
    pub white_noise_density: f64,
    /// Minimum σ / 0.664.
    pub bias_instability: f64,
    pub tau_at_min_s: f64,
    /// Tau range of the fitted −1/2 region.
    pub fit_range_s: (f64, f64),
    /// Free least-squares slope over the fitted region.
    pub fit_slope: f64,
}

/// White-noise density from the longest run of local slopes within
/// tolerance of −1/2 (fitted with the slope fixed at −1/2 and read at
/// τ = 1 s) and bias instability from the curve minimum.
pub fn fit_noise_params(curve: &AllanCurve, cfg: &FitConfig) -> Result<NoiseParams> {
    let p = &curve.points;
    if p.len() < 2 {
        return Err(Error::Fit("curve has fewer than two points".into()));
    }
    let span = (p[p.len() - 1].tau_s / p[0].tau_s).log10();
    if span + 1e-9 < cfg.min_decades {
        return Err(Error::Parameter(format!("curve spans {span:.2} decades, need {}", cfg.min_decades)));
    }
    // Local slopes between consecutive points; segment i joins points i, i+1.
    let ok: Vec<bool> = p
        .windows(2)
        .map(|w| {
            if w[0].adev <= 0.0 || w[1].adev <= 0.0 {
                return false;
            }
            let s = (w[1].adev / w[0].adev).ln() / (w[1].tau_s / w[0].tau_s).ln();
            (s + 0.5).abs() <= cfg.slope_tolerance
        })
        .collect();
    let (mut best, mut cur) = ((0usize, 0usize), (0usize, 0usize));
    for (i, &good) in ok.iter().enumerate() {
        if good {
            if cur.1 == 0 {
                cur = (i, 0);
            }
            cur.1 += 1;
            if cur.1 > best.1 {
                best = cur;
            }
        } else {
            cur = (0, 0);
        }
    }
    let n_pts = best.1 + 1;
    if best.1 == 0 || n_pts < cfg.min_points {
        return Err(Error::Fit("no -1/2 slope region found".into()));
    }
    let region = &p[best.0..best.0 + n_pts];
    let log_n = region.iter().map(|q| q.adev.ln() + 0.5 * q.tau_s.ln()).sum::<f64>() / n_pts as f64;
    let range = (region[0].tau_s, region[n_pts - 1].tau_s);
    let fit_slope = loglog_slope(curve, range.0, range.1)?;
    let min = p
        .iter()
        .min_by(|a, b| a.adev.total_cmp(&b.adev))
        .expect("nonempty");
    Ok(NoiseParams {
        white_noise_density: log_n.exp(),
        bias_instability: min.adev / 0.664,
        tau_at_min_s: min.tau_s,
        fit_range_s: range,
        fit_slope,
    })
}
