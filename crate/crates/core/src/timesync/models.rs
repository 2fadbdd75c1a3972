//! First-principles synchronization error and rolling-shutter timing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Motion that converts a timing error into a position error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyncMotion {
    /// Translation at `v` m/s.
    Linear { v: f64 },
    /// A point at radius `r` m on a body rotating at `omega_deg_s`.
    Angular { r: f64, omega_deg_s: f64 },
}

/// Position error (m) caused by a timestamp error of `dt` seconds.
pub fn sync_error_models(motion: SyncMotion, dt: f64) -> Result<f64> {
    let vals: &[f64] = match &motion {
        SyncMotion::Linear { v } => &[*v, dt],
        SyncMotion::Angular { r, omega_deg_s } => &[*r, *omega_deg_s, dt],
    };
    if vals.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Parameter(format!("inputs must be finite and >= 0: {motion:?}, dt={dt}")));
    }
    Ok(match motion {
        SyncMotion::Linear { v } => v * dt,
        SyncMotion::Angular { r, omega_deg_s } => r * omega_deg_s.to_radians() * dt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingShutterModel {
    pub fps: f64,
    /// Line slots per frame period, including blanking.
    pub total_line_slots: u32,
    pub image_lines: u32,
    pub exposure_s: f64,
}

impl RollingShutterModel {
    pub fn new(fps: f64, total_line_slots: u32, image_lines: u32, exposure_s: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) || !(exposure_s.is_finite() && exposure_s >= 0.0) {
            return Err(Error::Parameter("fps must be > 0 and exposure >= 0".into()));
        }
        if image_lines < 1 || total_line_slots < image_lines {
            return Err(Error::Parameter(format!(
                "need total_line_slots ({total_line_slots}) >= image_lines ({image_lines}) >= 1"
            )));
        }
        Ok(RollingShutterModel { fps, total_line_slots, image_lines, exposure_s })
    }

    /// Time between the starts of consecutive lines, `1 / (fps · slots)`.
    pub fn line_period(&self) -> f64 {
        1.0 / (self.fps * self.total_line_slots as f64)
    }

    /// Time from the first line to the end of the last line's slot.
    pub fn readout_duration(&self) -> f64 {
        self.image_lines as f64 * self.line_period()
    }

    fn check(&self, line: u32) -> Result<()> {
        if line >= self.image_lines {
            return Err(Error::Range(format!("line {line} outside 0..{}", self.image_lines)));
        }
        Ok(())
    }

    /// Start offset of `line` relative to line 0, seconds.
    pub fn line_time(&self, line: u32) -> Result<f64> {
        self.check(line)?;
        Ok(line as f64 / (self.fps * self.total_line_slots as f64))
    }

    /// Line offset plus half the exposure.
    pub fn mid_exposure_time(&self, line: u32) -> Result<f64> {
        Ok(self.line_time(line)? + 0.5 * self.exposure_s)
    }

    /// Like [`line_time`](Self::line_time) but with the line period truncated
    /// to a multiple of `resolution_s` first, as hand calculations often do.
    pub fn line_time_truncated(&self, line: u32, resolution_s: f64) -> Result<f64> {
        self.check(line)?;
        if !(resolution_s > 0.0) {
            return Err(Error::Parameter("resolution must be > 0".into()));
        }
        let steps = (self.line_period() / resolution_s + 1e-9).floor();
        Ok(line as f64 * steps * resolution_s)
    }
}

pub fn rolling_shutter_line_time(model: &RollingShutterModel, line: u32) -> Result<f64> {
    model.line_time(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_error() {
        let e = sync_error_models(SyncMotion::Linear { v: 1.0 }, 10e-6).unwrap();
        assert_relative_eq!(e, 1e-5, max_relative = 1e-12);
        assert_eq!(sync_error_models(SyncMotion::Linear { v: 3.0 }, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn angular_error_at_25m() {
        let e = sync_error_models(SyncMotion::Angular { r: 25.0, omega_deg_s: 200.0 }, 1e-3).unwrap();
        assert!((e - 0.0873).abs() < 1e-4, "{e}");
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(sync_error_models(SyncMotion::Linear { v: -1.0 }, 1.0).is_err());
    }

    #[test]
    fn line_times() {
        let m = RollingShutterModel::new(30.0, 1400, 1400, 0.01).unwrap();
        assert_eq!(m.line_time(0).unwrap(), 0.0);
        assert_relative_eq!(m.line_time(1).unwrap(), 23.8095238e-6, max_relative = 1e-8);
        assert_relative_eq!(m.line_time(1280).unwrap(), 1280.0 / 42000.0, max_relative = 1e-15);
        assert_relative_eq!(m.line_time_truncated(1280, 1e-7).unwrap(), 30.464e-3, max_relative = 1e-12);
        assert_relative_eq!(m.mid_exposure_time(0).unwrap(), 0.005);
    }

    #[test]
    fn line_range_and_model_validation() {
        let m = RollingShutterModel::new(30.0, 1400, 1280, 0.0).unwrap();
        assert!(matches!(m.line_time(1280), Err(Error::Range(_))));
        assert_relative_eq!(m.readout_duration(), 1280.0 / 42000.0, max_relative = 1e-15);
        assert!(RollingShutterModel::new(30.0, 1000, 1280, 0.0).is_err());
    }
}
