//! Readers and writers for the pipeline's file formats: PM sensor CSV,
//! counts CSV, per-image detections JSONL, ground-truth labels, and masks.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use trafficpm_core::aggregate::{Location, MeanCounts, PmSample, VehicleCountRecord};
use trafficpm_core::detection::{BoundingBox, Detection, Label};
use trafficpm_core::eval::{CountedClass, GroundTruthBox, GroundTruthImage};
use trafficpm_core::roi::{Point, RoiMask};
use trafficpm_core::Timestamp;

use crate::detector::WireDetection;
use crate::{iso8601, parse_iso8601};

pub const PM_HEADER: &str = "timestamp,location_id,pm1_ugm3,pm25_ugm3,rh_pct,temp_c";
pub const COUNTS_HEADER: &str = "camera_id,bin_start,n_images,car,truck,bus,total_mean";

#[derive(Debug, Clone, PartialEq)]
pub struct PmFile {
    pub samples: Vec<PmSample>,
    /// Rows dropped for a hard violation or an unreadable field.
    pub dropped: usize,
    /// Indices into `samples` of rows kept despite PM2.5 reading below PM1.
    pub flagged: Vec<usize>,
}

fn read_text(path: &Path, what: &str) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))
}

/// Parses a sensor CSV. Rows with an unreadable timestamp, location or
/// number, or failing a hard invariant, are dropped and tallied.
pub fn parse_pm_csv(path: &Path) -> anyhow::Result<PmFile> {
    let text = read_text(path, "PM file")?;
    parse_pm_text(&text).with_context(|| format!("PM file {}", path.display()))
}

pub fn parse_pm_text(text: &str) -> anyhow::Result<PmFile> {
    let header = text.lines().next().unwrap_or("").trim_end_matches('\r');
    if header != PM_HEADER {
        bail!("missing header: first line must be {PM_HEADER:?}");
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = PmFile {
        samples: Vec::new(),
        dropped: 0,
        flagged: Vec::new(),
    };
    for row in rdr.records() {
        let parsed = row.ok().and_then(|r| {
            if r.len() != 6 {
                return None;
            }
            let num = |i: usize| r[i].trim().parse::<f64>().ok();
            Some(PmSample {
                timestamp: parse_iso8601(&r[0]).ok()?,
                location: r[1].trim().parse::<Location>().ok()?,
                pm1: num(2)?,
                pm25: num(3)?,
                rh: num(4)?,
                temp: num(5)?,
            })
        });
        match parsed.map(|s| (s, s.check())) {
            Some((s, Ok(flag))) => {
                if flag {
                    out.flagged.push(out.samples.len());
                }
                out.samples.push(s);
            }
            _ => out.dropped += 1,
        }
    }
    if out.samples.is_empty() {
        bail!("no valid rows ({} dropped)", out.dropped);
    }
    Ok(out)
}

/// Writes a sensor CSV with the canonical header.
pub fn write_pm_csv(w: impl Write, samples: &[PmSample]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(PM_HEADER.split(','))?;
    for s in samples {
        w.write_record([
            iso8601(s.timestamp),
            s.location.to_string(),
            s.pm1.to_string(),
            s.pm25.to_string(),
            s.rh.to_string(),
            s.temp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes vehicle counts. Class columns are rounded half-up; `total_mean`
/// keeps the unrounded mean in shortest round-trip form.
pub fn write_counts_csv(w: impl Write, records: &[VehicleCountRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(COUNTS_HEADER.split(','))?;
    for r in records {
        let c = r.mean.rounded();
        w.write_record([
            r.camera_id.clone(),
            iso8601(r.bin_start),
            r.n_images.to_string(),
            c.car.to_string(),
            c.truck.to_string(),
            c.bus.to_string(),
            r.mean.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a counts CSV back. Per-image counts are not stored, so
/// `per_image` is empty and the class means are the rounded values.
pub fn read_counts_csv(path: &Path) -> anyhow::Result<Vec<VehicleCountRecord>> {
    let text = read_text(path, "counts file")?;
    let ctx = || format!("counts file {}", path.display());
    let header = text.lines().next().unwrap_or("").trim_end_matches('\r');
    if header != COUNTS_HEADER {
        bail!("{}: header must be {COUNTS_HEADER:?}", ctx());
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.with_context(ctx)?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> anyhow::Result<&str> {
            row.get(i)
                .with_context(|| format!("{}, line {line}: missing field {name}", ctx()))
        };
        let int = |i: usize, name: &str| -> anyhow::Result<u32> {
            field(i, name)?
                .parse()
                .with_context(|| format!("{}, line {line}: field {name}", ctx()))
        };
        let camera_id = field(0, "camera_id")?.to_owned();
        let bin_start = parse_iso8601(field(1, "bin_start")?)
            .with_context(|| format!("{}, line {line}: field bin_start", ctx()))?;
        let n_images = int(2, "n_images")? as usize;
        let (car, truck, bus) = (int(3, "car")?, int(4, "truck")?, int(5, "bus")?);
        let total: f64 = field(6, "total_mean")?
            .parse()
            .with_context(|| format!("{}, line {line}: field total_mean", ctx()))?;
        out.push(VehicleCountRecord {
            camera_id,
            bin_start,
            n_images,
            per_image: Vec::new(),
            mean: MeanCounts {
                car: car.into(),
                truck: truck.into(),
                bus: bus.into(),
                total,
            },
        });
    }
    Ok(out)
}

/// Detections for one archived frame, before and after filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_ref: String,
    pub camera_id: String,
    pub image_timestamp: String,
    pub width: u32,
    pub height: u32,
    /// Validated backend output, boxes clamped to the frame.
    pub raw: Vec<WireDetection>,
    pub filtered: Vec<WireDetection>,
}

impl DetectionRecord {
    pub fn timestamp(&self) -> anyhow::Result<Timestamp> {
        parse_iso8601(&self.image_timestamp)
            .with_context(|| format!("{}: field image_timestamp", self.image_ref))
    }
}

pub fn wire_to_detections(wire: &[WireDetection], ctx: &str) -> anyhow::Result<Vec<Detection>> {
    wire.iter()
        .enumerate()
        .map(|(i, d)| {
            let [x, y, w, h] = d.bbox;
            Ok(Detection {
                bbox: BoundingBox::new(x, y, w, h)
                    .with_context(|| format!("{ctx}: detections[{i}].bbox"))?,
                label: Label::from_wire(&d.label),
                confidence: d.confidence,
            })
        })
        .collect()
}

pub fn write_detections_jsonl(mut w: impl Write, records: &[DetectionRecord]) -> anyhow::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections_jsonl(path: &Path) -> anyhow::Result<Vec<DetectionRecord>> {
    let text = read_text(path, "detections file")?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("detections file {}, line {}", path.display(), i + 1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireLabelBox {
    pub label: String,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireLabelImage {
    pub image_ref: String,
    pub boxes: Vec<WireLabelBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireLabels {
    pub images: Vec<WireLabelImage>,
}

pub fn read_labels(path: &Path) -> anyhow::Result<Vec<GroundTruthImage>> {
    let text = read_text(path, "labels file")?;
    let wire: WireLabels = serde_json::from_str(&text)
        .with_context(|| format!("parsing labels file {}", path.display()))?;
    wire.images
        .into_iter()
        .enumerate()
        .map(|(i, img)| {
            let boxes = img
                .boxes
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    let field = || format!("{}: images[{i}].boxes[{j}]", path.display());
                    let [x, y, w, h] = b.bbox;
                    Ok(GroundTruthBox {
                        bbox: BoundingBox::new(x, y, w, h).with_context(|| format!("{}.bbox", field()))?,
                        label: CountedClass::parse(&b.label)
                            .with_context(|| format!("{}.label", field()))?,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok(GroundTruthImage {
                image_ref: img.image_ref,
                boxes,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMask {
    pub camera_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub polygon: Vec<[f64; 2]>,
}

impl From<&RoiMask> for WireMask {
    fn from(m: &RoiMask) -> Self {
        WireMask {
            camera_id: m.camera_id().to_owned(),
            image_width: m.image_width(),
            image_height: m.image_height(),
            polygon: m.polygon().iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

pub fn read_mask(path: &Path) -> anyhow::Result<RoiMask> {
    let text = read_text(path, "mask file")?;
    let w: WireMask = serde_json::from_str(&text)
        .with_context(|| format!("parsing mask file {}", path.display()))?;
    RoiMask::new(
        w.camera_id,
        w.image_width,
        w.image_height,
        w.polygon.iter().map(|&[x, y]| Point::new(x, y)).collect(),
    )
    .with_context(|| format!("mask file {}: field polygon", path.display()))
}
