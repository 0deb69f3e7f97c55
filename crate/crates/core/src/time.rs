//! Timestamps and epoch-aligned bin intervals.

use chrono::{DateTime, NaiveDate, Utc};

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("bin interval {0} s must be positive and divide 3600")]
pub struct InvalidInterval(pub u32);

/// A bin width in seconds that evenly divides one hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinInterval(u32);

impl BinInterval {
    pub const FIVE_MINUTES: BinInterval = BinInterval(300);

    pub fn new(seconds: u32) -> Result<Self, InvalidInterval> {
        if seconds == 0 || 3600 % seconds != 0 {
            return Err(InvalidInterval(seconds));
        }
        Ok(BinInterval(seconds))
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    /// Start of the bin containing `t`: `floor(epoch / interval) * interval`.
    pub fn floor(self, t: Timestamp) -> Timestamp {
        let width = i64::from(self.0);
        let start = t.timestamp().div_euclid(width) * width;
        DateTime::from_timestamp(start, 0).expect("floored timestamp stays in range")
    }

    pub fn is_aligned(self, t: Timestamp) -> bool {
        t.timestamp_subsec_nanos() == 0 && t.timestamp().rem_euclid(i64::from(self.0)) == 0
    }

    pub fn end_of(self, bin_start: Timestamp) -> Timestamp {
        bin_start + chrono::Duration::seconds(i64::from(self.0))
    }
}

impl Default for BinInterval {
    fn default() -> Self {
        Self::FIVE_MINUTES
    }
}

/// UTC calendar date of a timestamp.
pub fn utc_date(t: Timestamp) -> NaiveDate {
    t.date_naive()
}
