//! Day-level roadside-minus-baseline PM1 deltas and their correlation with
//! vehicle counts.
//!
//! One point per day: plume transport lag makes bin-level pairing of counts
//! and PM unreliable. Outlier days are removed only through an explicit
//! exclusion list, and the all-days coefficient is reported next to the
//! filtered one whenever that list is non-empty.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;

use crate::aggregate::{PmBin, VehicleCountRecord};
use crate::stats::{bounded_mean, pearson, CorrelationError, FiveNumber};
use crate::time::{utc_date, BinInterval, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSummary {
    pub pm1: FiveNumber,
    pub pm25: FiveNumber,
    pub rh: FiveNumber,
    pub temp: FiveNumber,
}

impl ChannelSummary {
    fn of(bins: &[&PmBin]) -> Option<ChannelSummary> {
        let col = |f: fn(&PmBin) -> f64| {
            let v: Vec<f64> = bins.iter().map(|b| f(b)).collect();
            FiveNumber::of(&v)
        };
        Some(ChannelSummary {
            pm1: col(|b| b.mean_pm1)?,
            pm25: col(|b| b.mean_pm25)?,
            rh: col(|b| b.mean_rh)?,
            temp: col(|b| b.mean_temp)?,
        })
    }
}

/// Spread of the bin-level values that fed one day's summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayDistributions {
    pub count_total: FiveNumber,
    pub l1: ChannelSummary,
    pub l2: ChannelSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailySummary {
    pub date: NaiveDate,
    /// Mean vehicles per image over the count bins inside the day's PM window.
    pub mean_count: f64,
    pub mean_pm1_l1: f64,
    pub mean_pm1_l2: f64,
    pub delta_pm1: f64,
    pub n_bins_count: usize,
    pub n_bins_l1: usize,
    pub n_bins_l2: usize,
    pub distributions: DayDistributions,
}

/// Why a day produced no summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaySkip {
    NoRoadside,
    NoBaseline,
    NoCounts,
}

impl fmt::Display for DaySkip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DaySkip::NoRoadside => "no roadside data",
            DaySkip::NoBaseline => "no baseline",
            DaySkip::NoCounts => "no vehicle counts in the PM window",
        })
    }
}

impl core::error::Error for DaySkip {}

fn usable_on(bins: &[PmBin], date: NaiveDate) -> Vec<&PmBin> {
    bins.iter()
        .filter(|b| !b.low_coverage && utc_date(b.bin_start) == date)
        .collect()
}

/// Summarises one day from count records and roadside (`l1`) and baseline
/// (`l2`) PM bins.
///
/// Low-coverage PM bins and bins dated on other days are ignored. The count
/// side only uses records whose bin starts inside the PM window, which runs
/// from the earliest usable PM bin of either location to the end of the
/// latest one.
pub fn daily_summary(
    date: NaiveDate,
    counts: &[VehicleCountRecord],
    l1: &[PmBin],
    l2: &[PmBin],
    interval: BinInterval,
) -> Result<DailySummary, DaySkip> {
    let road = usable_on(l1, date);
    let base = usable_on(l2, date);
    if road.is_empty() {
        return Err(DaySkip::NoRoadside);
    }
    if base.is_empty() {
        return Err(DaySkip::NoBaseline);
    }
    let starts = road.iter().chain(&base).map(|b| b.bin_start);
    let window_start: Timestamp = starts.clone().min().expect("non-empty");
    let window_end = interval.end_of(starts.max().expect("non-empty"));
    let totals: Vec<f64> = counts
        .iter()
        .filter(|r| r.bin_start >= window_start && r.bin_start < window_end)
        .map(|r| r.mean.total)
        .collect();
    let Some(mean_count) = bounded_mean(&totals) else {
        return Err(DaySkip::NoCounts);
    };
    let pm1 = |bins: &[&PmBin]| {
        let v: Vec<f64> = bins.iter().map(|b| b.mean_pm1).collect();
        bounded_mean(&v).expect("non-empty")
    };
    let (mean_pm1_l1, mean_pm1_l2) = (pm1(&road), pm1(&base));
    Ok(DailySummary {
        date,
        mean_count,
        mean_pm1_l1,
        mean_pm1_l2,
        delta_pm1: mean_pm1_l1 - mean_pm1_l2,
        n_bins_count: totals.len(),
        n_bins_l1: road.len(),
        n_bins_l2: base.len(),
        distributions: DayDistributions {
            count_total: FiveNumber::of(&totals).expect("non-empty"),
            l1: ChannelSummary::of(&road).expect("non-empty"),
            l2: ChannelSummary::of(&base).expect("non-empty"),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayPoint {
    pub date: NaiveDate,
    pub mean_count: f64,
    pub delta_pm1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    /// Coefficient over every summarised day, present only when dates were
    /// excluded and the all-days coefficient is defined.
    pub r_all_days: Option<f64>,
    pub n_days: usize,
    pub excluded_dates: Vec<NaiveDate>,
    pub days: Vec<DayPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least 3 days after exclusions, have {0}")]
    TooFewDays(usize),
    #[error("day {0} is summarised more than once")]
    DuplicateDate(NaiveDate),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
}

/// Correlates daily mean vehicle count with daily PM1 delta over the days not
/// listed in `excluded`.
pub fn correlate_days(
    summaries: &[DailySummary],
    excluded: &[NaiveDate],
) -> Result<CorrelationResult, AnalysisError> {
    let mut sorted: Vec<&DailySummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.date);
    for w in sorted.windows(2) {
        if w[0].date == w[1].date {
            return Err(AnalysisError::DuplicateDate(w[0].date));
        }
    }
    let excluded: BTreeSet<NaiveDate> = excluded.iter().copied().collect();
    let days: Vec<DayPoint> = sorted
        .iter()
        .filter(|s| !excluded.contains(&s.date))
        .map(|s| DayPoint {
            date: s.date,
            mean_count: s.mean_count,
            delta_pm1: s.delta_pm1,
        })
        .collect();
    if days.len() < 3 {
        return Err(AnalysisError::TooFewDays(days.len()));
    }
    let x: Vec<f64> = days.iter().map(|d| d.mean_count).collect();
    let y: Vec<f64> = days.iter().map(|d| d.delta_pm1).collect();
    let r = pearson(&x, &y)?;
    let r_all_days = if excluded.is_empty() {
        None
    } else {
        let x: Vec<f64> = sorted.iter().map(|s| s.mean_count).collect();
        let y: Vec<f64> = sorted.iter().map(|s| s.delta_pm1).collect();
        pearson(&x, &y).ok()
    };
    Ok(CorrelationResult {
        r,
        r_all_days,
        n_days: days.len(),
        excluded_dates: excluded.into_iter().collect(),
        days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{bin_counts, ClassCounts, Location};
    use alloc::string::ToString;
    use alloc::vec;
    use chrono::{Duration, TimeZone, Utc};
    use proptest::prelude::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 2, d).unwrap()
    }

    fn at(d: u32, h: u32, m: u32) -> Timestamp {
        Utc.with_ymd_and_hms(2022, 2, d, h, m, 0).unwrap()
    }

    fn pm_bin(location: Location, t: Timestamp, pm1: f64) -> PmBin {
        PmBin {
            location,
            bin_start: t,
            n_samples: 300,
            mean_pm1: pm1,
            mean_pm25: pm1 + 3.0,
            mean_rh: 75.0,
            mean_temp: 31.0,
            low_coverage: false,
        }
    }

    fn counts(d: u32, totals: &[u32]) -> Vec<VehicleCountRecord> {
        let samples: Vec<_> = totals
            .iter()
            .enumerate()
            .map(|(i, &n)| (at(d, 5, 0) + Duration::minutes(5 * i as i64), ClassCounts { car: n, truck: 0, bus: 0 }))
            .collect();
        bin_counts("cam", &samples, BinInterval::FIVE_MINUTES)
    }

    fn summary(date: NaiveDate, mean_count: f64, delta: f64) -> DailySummary {
        let f = FiveNumber::of(&[0.0]).unwrap();
        let c = ChannelSummary { pm1: f, pm25: f, rh: f, temp: f };
        DailySummary {
            date,
            mean_count,
            mean_pm1_l1: 10.0 + delta,
            mean_pm1_l2: 10.0,
            delta_pm1: delta,
            n_bins_count: 1,
            n_bins_l1: 1,
            n_bins_l2: 1,
            distributions: DayDistributions { count_total: f, l1: c, l2: c },
        }
    }

    #[test]
    fn delta_is_roadside_minus_baseline() {
        let l1 = [pm_bin(Location::L1, at(24, 5, 0), 18.0)];
        let l2 = [pm_bin(Location::L2, at(24, 5, 0), 12.5)];
        let s = daily_summary(day(24), &counts(24, &[20]), &l1, &l2, BinInterval::FIVE_MINUTES).unwrap();
        assert_eq!(s.delta_pm1, 5.5);
        assert_eq!(s.mean_count, 20.0);

        let l2 = [pm_bin(Location::L2, at(24, 5, 0), 18.0)];
        let s = daily_summary(day(24), &counts(24, &[20]), &l1, &l2, BinInterval::FIVE_MINUTES).unwrap();
        assert_eq!(s.delta_pm1, 0.0);
    }

    #[test]
    fn missing_sides_skip_the_day() {
        let l1 = [pm_bin(Location::L1, at(24, 5, 0), 18.0)];
        let iv = BinInterval::FIVE_MINUTES;
        assert_eq!(daily_summary(day(24), &counts(24, &[20]), &l1, &[], iv), Err(DaySkip::NoBaseline));
        assert_eq!(daily_summary(day(24), &counts(24, &[20]), &[], &l1, iv), Err(DaySkip::NoRoadside));
        let l2 = [pm_bin(Location::L2, at(24, 5, 0), 12.0)];
        assert_eq!(daily_summary(day(24), &[], &l1, &l2, iv), Err(DaySkip::NoCounts));
        assert_eq!(DaySkip::NoBaseline.to_string(), "no baseline");
    }

    #[test]
    fn low_coverage_and_foreign_bins_are_ignored() {
        let mut sparse = pm_bin(Location::L1, at(24, 5, 5), 100.0);
        sparse.low_coverage = true;
        let l1 = [pm_bin(Location::L1, at(24, 5, 0), 18.0), sparse, pm_bin(Location::L1, at(25, 5, 0), 50.0)];
        let l2 = [pm_bin(Location::L2, at(24, 5, 0), 12.0)];
        let s = daily_summary(day(24), &counts(24, &[20]), &l1, &l2, BinInterval::FIVE_MINUTES).unwrap();
        assert_eq!((s.mean_pm1_l1, s.n_bins_l1), (18.0, 1));
    }

    #[test]
    fn counts_outside_pm_window_are_ignored() {
        // PM covers 05:00-05:10; counts run 05:00-05:25.
        let l1 = [pm_bin(Location::L1, at(24, 5, 0), 18.0), pm_bin(Location::L1, at(24, 5, 5), 18.0)];
        let l2 = [pm_bin(Location::L2, at(24, 5, 0), 12.0)];
        let s = daily_summary(day(24), &counts(24, &[10, 20, 90, 90, 90, 90]), &l1, &l2, BinInterval::FIVE_MINUTES).unwrap();
        assert_eq!((s.mean_count, s.n_bins_count), (15.0, 2));
    }

    #[test]
    fn planted_linearity_gives_unit_r() {
        let counts = [20.0, 24.0, 31.0, 18.0, 27.0, 22.0, 35.0];
        let days: Vec<_> = counts.iter().enumerate().map(|(i, &c)| summary(day(20 + i as u32), c, 0.1 * c)).collect();
        let res = correlate_days(&days, &[]).unwrap();
        assert!((res.r - 1.0).abs() < 1e-12);
        assert_eq!(res.n_days, 7);
        assert_eq!(res.r_all_days, None);

        let mut corrupted = days.clone();
        corrupted[3].delta_pm1 = 40.0;
        let res = correlate_days(&corrupted, &[day(23)]).unwrap();
        assert!((res.r - 1.0).abs() < 1e-12);
        assert_eq!(res.n_days, 6);
        assert_eq!(res.excluded_dates, vec![day(23)]);
        assert!(res.days.iter().all(|d| d.date != day(23)));
        assert!(res.r_all_days.unwrap() < 0.9);
    }

    #[test]
    fn too_few_days_and_duplicates() {
        let days = [summary(day(20), 1.0, 1.0), summary(day(21), 2.0, 2.0), summary(day(22), 3.0, 2.5)];
        assert_eq!(correlate_days(&days, &[day(20)]), Err(AnalysisError::TooFewDays(2)));
        let dup = [summary(day(20), 1.0, 1.0), summary(day(20), 2.0, 2.0), summary(day(22), 3.0, 2.5)];
        assert_eq!(correlate_days(&dup, &[]), Err(AnalysisError::DuplicateDate(day(20))));
        let flat = [summary(day(20), 1.0, 1.0), summary(day(21), 2.0, 1.0), summary(day(22), 3.0, 1.0)];
        assert_eq!(
            correlate_days(&flat, &[]),
            Err(AnalysisError::Correlation(CorrelationError::ZeroVariance))
        );
    }

    proptest! {
        #[test]
        fn swapping_locations_negates_delta(
            road in proptest::collection::vec(0.0f64..80.0, 1..12),
            base in proptest::collection::vec(0.0f64..80.0, 1..12),
        ) {
            let mk = |loc, v: &[f64]| -> Vec<PmBin> {
                v.iter().enumerate().map(|(i, &p)| pm_bin(loc, at(24, 5, 0) + Duration::minutes(5 * i as i64), p)).collect()
            };
            let (l1, l2) = (mk(Location::L1, &road), mk(Location::L2, &base));
            let c = counts(24, &[10, 12, 14]);
            let iv = BinInterval::FIVE_MINUTES;
            let a = daily_summary(day(24), &c, &l1, &l2, iv).unwrap();
            let b = daily_summary(day(24), &c, &l2, &l1, iv).unwrap();
            prop_assert_eq!(a.delta_pm1, -b.delta_pm1);
            prop_assert_eq!(a.mean_count, b.mean_count);
        }

        #[test]
        fn no_exclusions_use_every_day(points in proptest::collection::vec((0.0f64..50.0, -5.0f64..15.0), 3..20)) {
            let days: Vec<_> = points.iter().enumerate().map(|(i, &(c, d))| {
                summary(day(1) + Duration::days(i as i64), c, d)
            }).collect();
            if let Ok(res) = correlate_days(&days, &[]) {
                prop_assert_eq!(res.n_days, days.len());
                prop_assert_eq!(res.days.len(), days.len());
            }
        }
    }
}
