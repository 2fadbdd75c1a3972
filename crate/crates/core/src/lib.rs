//! Toolkit for verifying time synchronization, calibration and ground-truth
//! fusion of multi-sensor payloads, with a closed-form payload simulator.

pub mod calib;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod geom;
pub mod imu;
pub mod perturb;
pub mod scenario;
pub mod series;
pub mod synth;
pub mod timesync;
pub mod trajectory;

pub use error::{Error, Result};
pub use geom::{Extrinsic, FrameId, Pose, Timestamp};
pub use series::{ImuSample, ImuSeries, PositionSeries};
pub use trajectory::Trajectory;
