//! Subcommand bodies: fetch, detect, analyze and eval, wired to the archive
//! and file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use rayon::prelude::*;
use trafficpm_core::aggregate::{
    bin_counts, bin_pm, count_vehicles, ClassCounts, Location, PmBin, PmSample, VehicleCountRecord,
};
use trafficpm_core::analysis::{correlate_days, daily_summary, CorrelationResult, DailySummary};
use trafficpm_core::dedup::InsertOutcome;
use trafficpm_core::detection::{detect, run_filter_pipeline, DetectRequest, FilterConfig};
use trafficpm_core::eval::{compute_metrics, EvalMetrics, ScoredImage};
use trafficpm_core::roi::{apply_mask, RoiMask};
use trafficpm_core::schedule::plan_schedule;
use trafficpm_core::time::utc_date;
use trafficpm_core::{BinInterval, Timestamp};

use crate::archive::{Archive, ArchiveRecord};
use crate::config::PipelineConfig;
use crate::detector::{Backend, WireDetection};
use crate::formats::{self, DetectionRecord};
use crate::ingest::{self, FetchedImage, IngestError, ReplayEntry, RepositoryClient};
use crate::iso8601;
use crate::report;

pub const COUNTS_FILE: &str = "counts.csv";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MASKED_DIR: &str = "masked";
pub const REPLAY_LOG: &str = "fetch_log.jsonl";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub responses: usize,
    pub inserted: usize,
    pub duplicates: usize,
    pub failures: usize,
    pub index_warnings: usize,
}

impl FetchStats {
    fn absorb(
        &mut self,
        archive: &mut Archive,
        result: Result<FetchedImage, IngestError>,
    ) -> anyhow::Result<()> {
        match result {
            Ok(f) => {
                self.responses += 1;
                match archive.dedup_insert(&f)? {
                    InsertOutcome::Inserted => self.inserted += 1,
                    InsertOutcome::Duplicate => self.duplicates += 1,
                }
            }
            Err(e) => {
                // Best effort: one bad camera does not stop the batch.
                tracing::warn!(error = %e, "image fetch failed");
                self.failures += 1;
            }
        }
        Ok(())
    }
}

/// Inserts every response recorded in a fetch log.
pub fn fetch_replay(archive: &mut Archive, log: &Path) -> anyhow::Result<FetchStats> {
    let results = ingest::replay_log(log).with_context(|| format!("replaying {}", log.display()))?;
    let mut stats = FetchStats::default();
    for r in results {
        stats.absorb(archive, r)?;
    }
    tracing::info!(
        log = %log.display(),
        responses = stats.responses,
        inserted = stats.inserted,
        duplicates = stats.duplicates,
        "replay finished"
    );
    Ok(stats)
}

/// Polls the repository at every scheduled instant in `[from, to)`. When
/// `record` is set, each successful response is also written to a replay
/// log in that directory.
pub fn fetch_live(
    cfg: &PipelineConfig,
    archive: &mut Archive,
    from: Timestamp,
    to: Timestamp,
    record: Option<&Path>,
) -> anyhow::Result<FetchStats> {
    let plan = plan_schedule(from, to, cfg.fetch_interval_s).context("fetch schedule")?;
    let client = RepositoryClient::new(&cfg.api.endpoint, cfg.api.key_name.as_deref())?;
    let mut stats = FetchStats::default();
    let mut log = match record {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("bodies"))
                .with_context(|| format!("creating {}", dir.display()))?;
            let p = dir.join(REPLAY_LOG);
            Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .with_context(|| format!("opening {}", p.display()))?,
            )
        }
        None => None,
    };
    for at in plan {
        let mut index = match client.fetch_index(at) {
            Ok(i) => i,
            Err(e) => {
                tracing::warn!(at = %iso8601(at), error = %e, "index fetch failed");
                stats.failures += 1;
                continue;
            }
        };
        stats.index_warnings += index.warnings;
        index.retain_cameras(&cfg.camera_ids);
        let results = client.fetch_all(&index.entries, cfg.max_in_flight);
        for (entry, r) in index.entries.iter().zip(results) {
            if let (Some(file), Some(dir), Ok(f)) = (log.as_mut(), record, &r) {
                use std::io::Write;
                let body = format!("bodies/{}.bin", f.image.content_hash);
                std::fs::write(dir.join(&body), &f.bytes)
                    .with_context(|| format!("writing {}", dir.join(&body).display()))?;
                let line = serde_json::to_string(&ReplayEntry::new(entry, f.fetched_at, body))?;
                writeln!(file, "{line}").context("appending to the replay log")?;
            }
            stats.absorb(archive, r)?;
        }
        tracing::info!(at = %iso8601(at), cameras = index.entries.len(), inserted = stats.inserted, "poll done");
    }
    Ok(stats)
}

/// Loads every configured mask, checking each is declared for its camera.
pub fn load_masks(cfg: &PipelineConfig) -> anyhow::Result<BTreeMap<String, RoiMask>> {
    let mut out = BTreeMap::new();
    for (camera, path) in &cfg.masks {
        let p = cfg.resolve(path);
        let mask = formats::read_mask(&p)?;
        if mask.camera_id() != camera {
            bail!(
                "mask file {}: camera_id {:?} does not match config key masks.{camera}",
                p.display(),
                mask.camera_id()
            );
        }
        out.insert(camera.clone(), mask);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutput {
    pub detections: Vec<DetectionRecord>,
    pub counts: Vec<VehicleCountRecord>,
}

fn detect_one(
    archive: &Archive,
    rec: &ArchiveRecord,
    masks: &BTreeMap<String, RoiMask>,
    backend: &Backend,
    filter: &FilterConfig,
    out_dir: &Path,
) -> anyhow::Result<(DetectionRecord, ClassCounts)> {
    let image_ref = rec.relative_path().to_string_lossy().replace('\\', "/");
    let mut image = archive.load_image(rec)?;
    let mut image_path = archive.image_path(rec);
    if let Some(mask) = masks.get(&rec.camera_id) {
        image = apply_mask(&image, mask).with_context(|| format!("masking {image_ref}"))?;
        let dir = out_dir.join(MASKED_DIR).join(&rec.camera_id);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        image_path = dir.join(format!("{}.png", rec.file_stem()));
        image::RgbImage::from_raw(image.width(), image.height(), image.pixels.as_bytes().to_vec())
            .expect("raster length matches its size")
            .save(&image_path)
            .with_context(|| format!("writing {}", image_path.display()))?;
    }
    let request = DetectRequest {
        image_path: image_path.to_string_lossy().into_owned(),
        width: image.width(),
        height: image.height(),
    };
    let raw = detect(&request, backend).with_context(|| format!("detecting on {image_ref}"))?;
    let filtered = run_filter_pipeline(&raw, filter, image.width(), image.height());
    let record = DetectionRecord {
        image_ref,
        camera_id: rec.camera_id.clone(),
        image_timestamp: iso8601(rec.image_timestamp),
        width: image.width(),
        height: image.height(),
        raw: raw.iter().map(WireDetection::from).collect(),
        filtered: filtered.iter().map(WireDetection::from).collect(),
    };
    Ok((record, count_vehicles(&filtered)))
}

/// Runs detection over the archive and bins filtered counts per camera.
/// Writes `detections.jsonl` and `counts.csv` into `out_dir`.
pub fn run_detect(
    cfg: &PipelineConfig,
    archive: &Archive,
    backend: &Backend,
    out_dir: &Path,
) -> anyhow::Result<DetectOutput> {
    let masks = load_masks(cfg)?;
    let filter = cfg.filter_config();
    let interval = cfg.interval()?;
    let mut records: Vec<&ArchiveRecord> = archive.records().iter().collect();
    records.sort_by(|a, b| {
        (&a.camera_id, a.image_timestamp, a.content_hash).cmp(&(&b.camera_id, b.image_timestamp, b.content_hash))
    });
    if !cfg.camera_ids.is_empty() {
        records.retain(|r| cfg.camera_ids.contains(&r.camera_id));
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let (detections, image_counts): (Vec<DetectionRecord>, Vec<ClassCounts>) = records
        .par_iter()
        .map(|rec| detect_one(archive, rec, &masks, backend, &filter, out_dir))
        .collect::<anyhow::Result<Vec<_>>>()?
        .into_iter()
        .unzip();

    let mut per_camera: BTreeMap<&str, Vec<(Timestamp, _)>> = BTreeMap::new();
    for (rec, counts) in records.iter().zip(image_counts) {
        per_camera
            .entry(rec.camera_id.as_str())
            .or_default()
            .push((rec.image_timestamp, counts));
    }
    let counts: Vec<VehicleCountRecord> = per_camera
        .iter()
        .flat_map(|(cam, samples)| bin_counts(cam, samples, interval))
        .collect();

    let mut buf = Vec::new();
    formats::write_detections_jsonl(&mut buf, &detections)?;
    write_out(&out_dir.join(DETECTIONS_FILE), &buf)?;
    let mut buf = Vec::new();
    formats::write_counts_csv(&mut buf, &counts)?;
    write_out(&out_dir.join(COUNTS_FILE), &buf)?;
    tracing::info!(images = detections.len(), bins = counts.len(), out = %out_dir.display(), "detect finished");
    Ok(DetectOutput { detections, counts })
}

fn write_out(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutput {
    pub summaries: Vec<DailySummary>,
    pub skipped: Vec<(NaiveDate, String)>,
    pub correlation: CorrelationResult,
    pub files: Vec<PathBuf>,
}

/// Bins the sensor files per location and summarises every date that has
/// PM data, then correlates the retained days.
pub fn run_analyze(
    counts_path: &Path,
    pm_paths: &[PathBuf],
    interval: BinInterval,
    min_samples: usize,
    excluded: &[NaiveDate],
    out_dir: &Path,
) -> anyhow::Result<AnalyzeOutput> {
    if pm_paths.is_empty() {
        bail!("analyze needs at least one PM file");
    }
    let counts = formats::read_counts_csv(counts_path)?;
    let mut by_loc: BTreeMap<Location, Vec<PmSample>> = BTreeMap::new();
    for p in pm_paths {
        let f = formats::parse_pm_csv(p)?;
        tracing::info!(
            file = %p.display(),
            samples = f.samples.len(),
            dropped = f.dropped,
            flagged = f.flagged.len(),
            "PM file read"
        );
        for s in f.samples {
            by_loc.entry(s.location).or_default().push(s);
        }
    }
    let bins = |loc: Location| -> Vec<PmBin> {
        by_loc
            .get(&loc)
            .map(|s| bin_pm(s, interval, min_samples).expect("grouped by location"))
            .unwrap_or_default()
    };
    let (l1, l2) = (bins(Location::L1), bins(Location::L2));
    let dates: BTreeSet<NaiveDate> = l1.iter().chain(&l2).map(|b| utc_date(b.bin_start)).collect();
    let mut summaries = Vec::new();
    let mut skipped = Vec::new();
    for date in dates {
        match daily_summary(date, &counts, &l1, &l2, interval) {
            Ok(s) => summaries.push(s),
            Err(why) => {
                tracing::info!(date = %date, reason = %why, "day skipped");
                skipped.push((date, why.to_string()));
            }
        }
    }
    if summaries.is_empty() {
        bail!("no day could be summarised; nothing written");
    }
    let correlation = correlate_days(&summaries, excluded).context("correlating days")?;
    let files = report::write_analysis(out_dir, &summaries, &correlation)?;
    tracing::info!(r = correlation.r, n_days = correlation.n_days, "analyze finished");
    Ok(AnalyzeOutput {
        summaries,
        skipped,
        correlation,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub n_images: usize,
    pub baseline: EvalMetrics,
    pub filtered: EvalMetrics,
    pub json: String,
}

/// Scores raw and filtered detections against hand labels.
pub fn run_eval(labels: &Path, detections: &Path, iou_threshold: f64) -> anyhow::Result<EvalOutput> {
    let gt = formats::read_labels(labels)?;
    let dets = formats::read_detections_jsonl(detections)?;
    let by_ref: BTreeMap<&str, &DetectionRecord> =
        dets.iter().map(|d| (d.image_ref.as_str(), d)).collect();
    let mut baseline = Vec::with_capacity(gt.len());
    let mut filtered = Vec::with_capacity(gt.len());
    for img in gt {
        let rec = by_ref.get(img.image_ref.as_str()).with_context(|| {
            format!(
                "labels file {}: image_ref {:?} has no detections in {}",
                labels.display(),
                img.image_ref,
                detections.display()
            )
        })?;
        let raw = formats::wire_to_detections(&rec.raw, &rec.image_ref)?;
        let kept = formats::wire_to_detections(&rec.filtered, &rec.image_ref)?;
        baseline.push(ScoredImage::new(img.boxes.clone(), &raw, iou_threshold));
        filtered.push(ScoredImage::new(img.boxes, &kept, iou_threshold));
    }
    let n_images = baseline.len();
    let b = compute_metrics(&baseline).with_context(|| format!("labels file {}", labels.display()))?;
    let f = compute_metrics(&filtered).with_context(|| format!("labels file {}", labels.display()))?;
    Ok(EvalOutput {
        n_images,
        json: report::metrics_json(iou_threshold, n_images, &b, &f),
        baseline: b,
        filtered: f,
    })
}
