//! Analysis and evaluation outputs: boxplot data, scatter data, the
//! correlation report, and detection metrics.
//!
//! Floats are written in shortest round-trip form so reruns are
//! byte-identical and readers recover the exact values.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use trafficpm_core::analysis::{ChannelSummary, CorrelationResult, DailySummary};
use trafficpm_core::eval::{EvalMetrics, GroupMetrics};
use trafficpm_core::stats::FiveNumber;

pub const BOXPLOT_FILE: &str = "boxplot.csv";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BOXPLOT_HEADER: &str = "date,location_id,channel,min,q1,median,q3,max,n";
pub const SCATTER_HEADER: &str = "date,mean_count,delta_pm1_ugm3";

/// `location_id` used for the per-day distribution of binned vehicle counts.
pub const CAMERAS_LOCATION: &str = "cameras";

fn five_row(date: &str, loc: &str, channel: &str, f: &FiveNumber) -> [String; 9] {
    [
        date.to_owned(),
        loc.to_owned(),
        channel.to_owned(),
        f.min.to_string(),
        f.q1.to_string(),
        f.median.to_string(),
        f.q3.to_string(),
        f.max.to_string(),
        f.n.to_string(),
    ]
}

/// One row per day, location and channel, over every summarised day.
pub fn write_boxplot_csv(w: impl Write, summaries: &[DailySummary]) -> anyhow::Result<()> {
    let mut sorted: Vec<&DailySummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.date);
    let mut w = csv::Writer::from_writer(w);
    w.write_record(BOXPLOT_HEADER.split(','))?;
    for s in sorted {
        let date = s.date.to_string();
        let d = &s.distributions;
        for (loc, ch) in [("L1", &d.l1), ("L2", &d.l2)] {
            let ChannelSummary { pm1, pm25, rh, temp } = ch;
            for (name, f) in [("pm1", pm1), ("pm25", pm25), ("rh", rh), ("temp", temp)] {
                w.write_record(five_row(&date, loc, name, f))?;
            }
        }
        w.write_record(five_row(&date, CAMERAS_LOCATION, "count_total", &d.count_total))?;
    }
    w.flush()?;
    Ok(())
}

/// The retained (non-excluded) days that enter the correlation.
pub fn write_scatter_csv(w: impl Write, result: &CorrelationResult) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(SCATTER_HEADER.split(','))?;
    for d in &result.days {
        w.write_record([
            d.date.to_string(),
            d.mean_count.to_string(),
            d.delta_pm1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReportDay {
    date: String,
    mean_count: f64,
    delta_pm1_ugm3: f64,
}

#[derive(Serialize)]
struct Report {
    r: f64,
    r_all_days: Option<f64>,
    n_days: usize,
    excluded_dates: Vec<String>,
    days: Vec<ReportDay>,
}

pub fn report_json(result: &CorrelationResult) -> String {
    let report = Report {
        r: result.r,
        r_all_days: result.r_all_days,
        n_days: result.n_days,
        excluded_dates: result.excluded_dates.iter().map(|d| d.to_string()).collect(),
        days: result
            .days
            .iter()
            .map(|d| ReportDay {
                date: d.date.to_string(),
                mean_count: d.mean_count,
                delta_pm1_ugm3: d.delta_pm1,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes boxplot, scatter and report files into `dir`. Nothing is written
/// when there is no summarised day.
pub fn write_analysis(
    dir: &Path,
    summaries: &[DailySummary],
    result: &CorrelationResult,
) -> anyhow::Result<Vec<PathBuf>> {
    if summaries.is_empty() {
        bail!("no day could be summarised; nothing written");
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut boxplot = Vec::new();
    write_boxplot_csv(&mut boxplot, summaries)?;
    let mut scatter = Vec::new();
    write_scatter_csv(&mut scatter, result)?;
    let files = [
        (dir.join(BOXPLOT_FILE), boxplot),
        (dir.join(SCATTER_FILE), scatter),
        (dir.join(REPORT_FILE), report_json(result).into_bytes()),
    ];
    for (p, b) in &files {
        write_file(p, b)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[derive(Serialize)]
struct WireGroupCounts {
    gt: usize,
    matched_correct: usize,
    matched_wrong: usize,
    undetected: usize,
    false_detections: usize,
}

#[derive(Serialize)]
struct WireGroup {
    correctly_identified: f64,
    undetected: f64,
    misclassified: f64,
    falsely_detected: f64,
    counts: WireGroupCounts,
}

impl From<&GroupMetrics> for WireGroup {
    fn from(m: &GroupMetrics) -> Self {
        let c = m.counts;
        WireGroup {
            correctly_identified: m.correctly_identified,
            undetected: m.undetected,
            misclassified: m.misclassified,
            falsely_detected: m.falsely_detected,
            counts: WireGroupCounts {
                gt: c.gt,
                matched_correct: c.matched_correct,
                matched_wrong: c.matched_wrong,
                undetected: c.undetected,
                false_detections: c.false_detections,
            },
        }
    }
}

#[derive(Serialize)]
struct WireMetrics {
    car: Option<WireGroup>,
    trucks_buses: Option<WireGroup>,
}

impl From<&EvalMetrics> for WireMetrics {
    fn from(m: &EvalMetrics) -> Self {
        WireMetrics {
            car: m.car.as_ref().map(WireGroup::from),
            trucks_buses: m.trucks_buses.as_ref().map(WireGroup::from),
        }
    }
}

#[derive(Serialize)]
struct MetricsReport {
    iou_threshold: f64,
    n_images: usize,
    baseline: WireMetrics,
    filtered: WireMetrics,
}

/// Metrics JSON comparing unfiltered and filtered detections.
pub fn metrics_json(
    iou_threshold: f64,
    n_images: usize,
    baseline: &EvalMetrics,
    filtered: &EvalMetrics,
) -> String {
    let mut s = serde_json::to_string_pretty(&MetricsReport {
        iou_threshold,
        n_images,
        baseline: baseline.into(),
        filtered: filtered.into(),
    })
    .expect("metrics serialize");
    s.push('\n');
    s
}
