use crate::error::{Error, Result};
use crate::geom::Timestamp;
use crate::series::PositionSeries;

/// Gaps where the spacing between consecutive samples exceeds
/// `gap_factor` × the median spacing. Each interval runs from the last sample
/// before the gap to the first sample after it.
pub fn detect_dropouts(tps: &PositionSeries, gap_factor: f64) -> Result<Vec<(Timestamp, Timestamp)>> {
    if !(gap_factor.is_finite() && gap_factor > 0.0) {
        return Err(Error::Parameter(format!("gap factor must be > 0, got {gap_factor}")));
    }
    let s = tps.samples();
    if s.len() < 2 {
        return Err(Error::Data("need at least two position samples".into()));
    }
    let nominal = tps.nominal_period_s().ok_or_else(|| Error::Data("no nominal period".into()))?;
    Ok(s
        .windows(2)
        .filter(|w| w[1].0.secs_since(w[0].0) > gap_factor * nominal)
        .map(|w| (w[0].0, w[1].0))
        .collect())
}

/// Like [`detect_dropouts`] with an explicit nominal period, for streams too
/// short to estimate one.
pub fn detect_dropouts_with_period(
    tps: &PositionSeries,
    nominal_period_s: f64,
    gap_factor: f64,
) -> Vec<(Timestamp, Timestamp)> {
    tps.samples()
        .windows(2)
        .filter(|w| w[1].0.secs_since(w[0].0) > gap_factor * nominal_period_s)
        .map(|w| (w[0].0, w[1].0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_tps, AnalyticTrajectory};
    use nalgebra::Vector3;

    #[test]
    fn uniform_stream_has_no_dropouts() {
        let tps = simulate_tps(&AnalyticTrajectory::walking(10.0), &Vector3::zeros(), 20.0, 0.0, &[], 0).unwrap();
        assert!(detect_dropouts(&tps, 3.0).unwrap().is_empty());
    }

    #[test]
    fn synthetic_dropouts_are_found() {
        let tps = simulate_tps(&AnalyticTrajectory::walking(30.0), &Vector3::zeros(), 20.0, 0.0, &[(4.5, 9.0), (17.0, 22.0)], 0)
            .unwrap();
        let d = detect_dropouts(&tps, 3.0).unwrap();
        assert_eq!(d.len(), 2);
        let want = [(4.5, 9.0), (17.0, 22.0)];
        for ((s, e), (ws, we)) in d.iter().zip(want) {
            assert!((s.as_secs_f64() - ws).abs() <= 0.05 + 1e-9);
            assert!((e.as_secs_f64() - we).abs() <= 0.05 + 1e-9);
        }
    }

    #[test]
    fn two_samples_one_second_apart() {
        let tps = PositionSeries::new(
            "world",
            0.0,
            vec![(Timestamp(0), Vector3::zeros()), (Timestamp(1_000_000_000), Vector3::zeros())],
        )
        .unwrap();
        assert_eq!(detect_dropouts_with_period(&tps, 0.05, 3.0).len(), 1);
    }
}
