//! TPS + IMU batch fusion and camera-to-prism calibration.

pub mod batch;
pub mod blocktri;
pub mod dropouts;
pub mod totalrecon;

pub use batch::{fuse_tps_imu, FusedTrajectory, FusionConfig, FusionNoise, LmConfig, LmReport, PriorSigmas};
pub use dropouts::{detect_dropouts, detect_dropouts_with_period};
pub use totalrecon::{
    totalrecon_consistency, totalrecon_initial_guess, totalrecon_jacobian, totalrecon_residuals, totalrecon_samples_from_json, totalrecon_samples_to_json, totalrecon_solve, ConsistencyReport,
    TotalReconReport, TotalReconSample, TotalReconState,
};
