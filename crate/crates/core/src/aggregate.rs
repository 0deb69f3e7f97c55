//! Per-bin vehicle counts and particulate-matter averages.
//!
//! Each image is an instantaneous sample of traffic density and the camera
//! cadence is irregular, so a bin's traffic figure is the mean of its per-image
//! counts, never the sum. Bins with no data are omitted rather than zero-filled.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::detection::{Detection, Label};
use crate::stats::{bounded_mean, round_half_up};
use crate::time::{BinInterval, Timestamp};

/// Counted vehicles in one image. Motorcycles and unrecognised objects never
/// contribute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub car: u32,
    pub truck: u32,
    pub bus: u32,
}

impl ClassCounts {
    pub fn total(&self) -> u32 {
        self.car + self.truck + self.bus
    }
}

pub fn count_vehicles(dets: &[Detection]) -> ClassCounts {
    let mut c = ClassCounts::default();
    for d in dets {
        match d.label {
            Label::Car => c.car += 1,
            Label::Truck => c.truck += 1,
            Label::Bus => c.bus += 1,
            Label::Motorcycle | Label::Other => {}
        }
    }
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanCounts {
    pub car: f64,
    pub truck: f64,
    pub bus: f64,
    pub total: f64,
}

impl MeanCounts {
    /// Per-class means rounded half-up, for reporting.
    pub fn rounded(&self) -> ClassCounts {
        ClassCounts {
            car: round_half_up(self.car) as u32,
            truck: round_half_up(self.truck) as u32,
            bus: round_half_up(self.bus) as u32,
        }
    }
}

/// Vehicle counts for one camera over one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleCountRecord {
    pub camera_id: String,
    pub bin_start: Timestamp,
    pub n_images: usize,
    pub per_image: Vec<ClassCounts>,
    pub mean: MeanCounts,
}

fn mean_of(values: impl Iterator<Item = u32>) -> f64 {
    let v: Vec<f64> = values.map(f64::from).collect();
    bounded_mean(&v).unwrap_or(0.0)
}

/// Groups per-image counts into epoch-aligned bins, ordered by bin start.
pub fn bin_counts(
    camera_id: &str,
    samples: &[(Timestamp, ClassCounts)],
    interval: BinInterval,
) -> Vec<VehicleCountRecord> {
    let mut bins: BTreeMap<Timestamp, Vec<ClassCounts>> = BTreeMap::new();
    for (t, c) in samples {
        bins.entry(interval.floor(*t)).or_default().push(*c);
    }
    bins.into_iter()
        .map(|(bin_start, per_image)| {
            let mean = MeanCounts {
                car: mean_of(per_image.iter().map(|c| c.car)),
                truck: mean_of(per_image.iter().map(|c| c.truck)),
                bus: mean_of(per_image.iter().map(|c| c.bus)),
                total: mean_of(per_image.iter().map(ClassCounts::total)),
            };
            VehicleCountRecord {
                camera_id: String::from(camera_id),
                bin_start,
                n_images: per_image.len(),
                per_image,
                mean,
            }
        })
        .collect()
}

/// Sensor placement: `L1` at the roadside, `L2` at the away-from-road baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    L1,
    L2,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::L1 => "L1",
            Location::L2 => "L2",
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown location id {0:?}, expected L1 or L2")]
pub struct UnknownLocation(pub String);

impl FromStr for Location {
    type Err = UnknownLocation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L1" => Ok(Location::L1),
            "L2" => Ok(Location::L2),
            other => Err(UnknownLocation(String::from(other))),
        }
    }
}

/// One 1 Hz sensor reading. PM in µg/m³, RH in percent, temperature in °C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmSample {
    pub location: Location,
    pub timestamp: Timestamp,
    pub pm1: f64,
    pub pm25: f64,
    pub rh: f64,
    pub temp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SampleRejection {
    #[error("non-finite reading")]
    NonFinite,
    #[error("negative PM concentration")]
    NegativePm,
    #[error("relative humidity outside [0, 100]")]
    HumidityOutOfRange,
}

impl PmSample {
    /// Checks the hard invariants. `Ok(true)` means the sample is kept but
    /// flagged because PM2.5 reads below PM1.
    pub fn check(&self) -> Result<bool, SampleRejection> {
        let all_finite = [self.pm1, self.pm25, self.rh, self.temp]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(SampleRejection::NonFinite);
        }
        if self.pm1 < 0.0 || self.pm25 < 0.0 {
            return Err(SampleRejection::NegativePm);
        }
        if !(0.0..=100.0).contains(&self.rh) {
            return Err(SampleRejection::HumidityOutOfRange);
        }
        Ok(self.pm25 < self.pm1)
    }
}

/// Per-bin sensor means for one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmBin {
    pub location: Location,
    pub bin_start: Timestamp,
    pub n_samples: usize,
    pub mean_pm1: f64,
    pub mean_pm25: f64,
    pub mean_rh: f64,
    pub mean_temp: f64,
    pub low_coverage: bool,
}

/// Fraction of the expected 1 Hz samples a bin needs before it is usable.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.5;

/// Minimum sample count for a bin at 1 Hz: `ceil(coverage * interval)`.
pub fn min_samples_for(coverage: f64, interval: BinInterval) -> usize {
    libm::ceil(coverage * f64::from(interval.seconds())) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("samples mix locations {0} and {1}; bin one location at a time")]
pub struct MixedLocations(pub Location, pub Location);

/// Averages each channel over epoch-aligned bins. Bins with fewer than
/// `min_samples` readings are emitted but marked low-coverage.
pub fn bin_pm(
    samples: &[PmSample],
    interval: BinInterval,
    min_samples: usize,
) -> Result<Vec<PmBin>, MixedLocations> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = samples.iter().find(|s| s.location != first.location) {
        return Err(MixedLocations(first.location, other.location));
    }
    let mut bins: BTreeMap<Timestamp, Vec<&PmSample>> = BTreeMap::new();
    for s in samples {
        bins.entry(interval.floor(s.timestamp)).or_default().push(s);
    }
    Ok(bins
        .into_iter()
        .map(|(bin_start, group)| {
            let channel = |f: fn(&PmSample) -> f64| {
                let v: Vec<f64> = group.iter().map(|s| f(s)).collect();
                bounded_mean(&v).expect("bins are never empty")
            };
            PmBin {
                location: first.location,
                bin_start,
                n_samples: group.len(),
                mean_pm1: channel(|s| s.pm1),
                mean_pm25: channel(|s| s.pm25),
                mean_rh: channel(|s| s.rh),
                mean_temp: channel(|s| s.temp),
                low_coverage: group.len() < min_samples,
            }
        })
        .collect())
}
