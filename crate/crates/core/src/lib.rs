//! Allocation-only building blocks for turning traffic-camera detections into
//! time-binned vehicle counts and correlating them with roadside particulate
//! matter readings.
//!
//! Nothing in this crate touches the filesystem, the network or a clock. All
//! inputs arrive as values and all outputs leave as values; the `trafficpm`
//! crate owns IO, wire formats and the command-line front end.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod analysis;
pub mod dedup;
pub mod detection;
pub mod eval;
pub mod raster;
pub mod roi;
pub mod schedule;
pub mod stats;
pub mod time;

pub use aggregate::{ClassCounts, Location, MeanCounts, PmBin, PmSample, VehicleCountRecord};
pub use analysis::{CorrelationResult, DailySummary, DaySkip};
pub use detection::{BoundingBox, Detection, FilterConfig, Label};
pub use raster::{ContentHash, Raster, TrafficImage};
pub use roi::RoiMask;
pub use time::{BinInterval, Timestamp};
