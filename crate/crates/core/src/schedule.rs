//! Request plans for polling the image repository.
//!
//! A plan lists the instants at which the index is requested. The repository
//! does not capture frames on a fixed cadence, so the image timestamps that
//! come back can differ from the plan.

use alloc::vec::Vec;
use chrono::Duration;

use crate::time::Timestamp;

/// Smallest polling interval accepted. Shorter intervals mostly re-fetch the
/// same frame.
pub const MIN_INTERVAL_SECS: u32 = 60;
pub const DEFAULT_INTERVAL_SECS: u32 = 300;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedule range is empty: from {from} is not before to {to}")]
    EmptyRange { from: Timestamp, to: Timestamp },
    #[error("polling interval {0} s is below the {MIN_INTERVAL_SECS} s floor")]
    IntervalTooShort(u32),
}

/// Timestamps `from + k * interval` lying in the half-open range `[from, to)`.
pub fn plan_schedule(
    from: Timestamp,
    to: Timestamp,
    interval_secs: u32,
) -> Result<Vec<Timestamp>, ScheduleError> {
    if from >= to {
        return Err(ScheduleError::EmptyRange { from, to });
    }
    if interval_secs < MIN_INTERVAL_SECS {
        return Err(ScheduleError::IntervalTooShort(interval_secs));
    }
    let step = Duration::seconds(i64::from(interval_secs));
    let mut out = Vec::new();
    let mut t = from;
    while t < to {
        out.push(t);
        t += step;
    }
    Ok(out)
}
