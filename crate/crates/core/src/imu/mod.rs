//! IMU noise identification, preintegration and dead reckoning.

pub mod allan;
pub mod preint;
pub mod strapdown;

pub use allan::{allan_deviation, fit_noise_params, log_spaced_taus, loglog_slope, AllanCurve, FitConfig, NoiseParams};
pub use preint::{preintegrate, preintegrate_between, ImuBias, NoiseDensity, Preintegrated};
pub use strapdown::{dead_reckon, NavState};
