//! Time-offset estimation between sensor streams, synchronization error
//! models, rolling-shutter line timing and clock-offset log reporting.

pub mod align;
pub mod models;
pub mod ptp;

pub use align::{
    align_imu_pair, coarse_offset_xcorr, refine_offset_mse, resample_linear, AlignConfig, AxisSignal,
    OffsetEstimate, RefineConfig, Refinement,
};
pub use models::{rolling_shutter_line_time, sync_error_models, RollingShutterModel, SyncMotion};
pub use ptp::{parse_offset_log, ptp_report, PtpReport};
