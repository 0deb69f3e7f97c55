//! Pipeline configuration file.
//!
//! Paths are stored as written and resolved against the directory holding
//! the config file, so a loaded config re-serializes to the same JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use trafficpm_core::detection::FilterConfig;
use trafficpm_core::BinInterval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    pub endpoint: String,
    /// Header carrying the API key; the value is read from the environment.
    #[serde(default)]
    pub key_name: Option<String>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            endpoint: "https://api.data.gov.sg/v1/transport/traffic-images".into(),
            key_name: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    pub min_confidence: f64,
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub cross_class_iou: f64,
    pub same_label_nms_iou: Option<f64>,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterConfig::default().into()
    }
}

impl From<FilterConfig> for FilterSettings {
    fn from(c: FilterConfig) -> Self {
        FilterSettings {
            min_confidence: c.min_confidence,
            min_area_frac: c.min_area_frac,
            max_area_frac: c.max_area_frac,
            min_aspect: c.min_aspect,
            max_aspect: c.max_aspect,
            cross_class_iou: c.cross_class_iou,
            same_label_nms_iou: c.same_label_nms_iou,
        }
    }
}

impl From<FilterSettings> for FilterConfig {
    fn from(s: FilterSettings) -> Self {
        FilterConfig {
            min_confidence: s.min_confidence,
            min_area_frac: s.min_area_frac,
            max_area_frac: s.max_area_frac,
            min_aspect: s.min_aspect,
            max_aspect: s.max_aspect,
            cross_class_iou: s.cross_class_iou,
            same_label_nms_iou: s.same_label_nms_iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Fixture mapping image path to protocol response.
    Mock(PathBuf),
    /// Child process speaking the protocol over stdin/stdout.
    Command(Vec<String>),
    /// Service accepting `POST /detect`.
    Url(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    /// `mock:<fixture>`, `cmd:<program> [args...]`, or an `http(s)://` URL.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("mock:") {
            return Ok(BackendSpec::Mock(path.into()));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err("cmd: backend needs a program".into());
            }
            return Ok(BackendSpec::Command(argv));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendSpec::Url(s.into()));
        }
        Err(format!(
            "backend {s:?} must be mock:<fixture>, cmd:<program> or an http(s) URL"
        ))
    }
}

fn default_interval() -> u32 {
    trafficpm_core::schedule::DEFAULT_INTERVAL_SECS
}
fn default_coverage() -> f64 {
    trafficpm_core::aggregate::DEFAULT_MIN_COVERAGE
}
fn default_in_flight() -> usize {
    crate::ingest::DEFAULT_MAX_IN_FLIGHT
}
fn default_eval_iou() -> f64 {
    0.5
}
fn default_output() -> PathBuf {
    "out".into()
}
fn default_archive() -> PathBuf {
    "archive".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub api: ApiConfig,
    #[serde(default)]
    pub camera_ids: Vec<String>,
    /// Mask file per camera id.
    #[serde(default)]
    pub masks: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default = "default_interval")]
    pub bin_interval_s: u32,
    #[serde(default = "default_interval")]
    pub fetch_interval_s: u32,
    #[serde(default = "default_coverage")]
    pub min_coverage: f64,
    #[serde(default)]
    pub excluded_dates: Vec<NaiveDate>,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    #[serde(default = "default_archive")]
    pub archive_dir: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_iou")]
    pub eval_iou_threshold: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            api: ApiConfig::default(),
            camera_ids: Vec::new(),
            masks: BTreeMap::new(),
            filter: FilterSettings::default(),
            bin_interval_s: default_interval(),
            fetch_interval_s: default_interval(),
            min_coverage: default_coverage(),
            excluded_dates: Vec::new(),
            backend: None,
            archive_dir: default_archive(),
            output_dir: default_output(),
            eval_iou_threshold: default_eval_iou(),
            max_in_flight: default_in_flight(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<PipelineConfig> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn interval(&self) -> anyhow::Result<BinInterval> {
        BinInterval::new(self.bin_interval_s).context("field bin_interval_s")
    }

    pub fn filter_config(&self) -> FilterConfig {
        self.filter.into()
    }

    pub fn min_samples(&self) -> anyhow::Result<usize> {
        Ok(trafficpm_core::aggregate::min_samples_for(
            self.min_coverage,
            self.interval()?,
        ))
    }

    pub fn archive_dir(&self) -> PathBuf {
        self.resolve(&self.archive_dir)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks field ranges and that every referenced input file exists.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.interval()?;
        if self.fetch_interval_s < trafficpm_core::schedule::MIN_INTERVAL_SECS {
            bail!(
                "field fetch_interval_s: {} is below the {} s floor",
                self.fetch_interval_s,
                trafficpm_core::schedule::MIN_INTERVAL_SECS
            );
        }
        self.filter_config().validate().context("field filter")?;
        if !(0.0..=1.0).contains(&self.min_coverage) {
            bail!("field min_coverage: {} is outside [0, 1]", self.min_coverage);
        }
        if !(self.eval_iou_threshold > 0.0 && self.eval_iou_threshold <= 1.0) {
            bail!(
                "field eval_iou_threshold: {} is outside (0, 1]",
                self.eval_iou_threshold
            );
        }
        if self.max_in_flight == 0 {
            bail!("field max_in_flight: must be at least 1");
        }
        for (camera, mask) in &self.masks {
            let p = self.resolve(mask);
            if !p.is_file() {
                bail!("field masks.{camera}: mask file {} does not exist", p.display());
            }
        }
        match &self.backend {
            Some(BackendSpec::Mock(f)) => {
                let p = self.resolve(f);
                if !p.is_file() {
                    bail!("field backend.mock: fixture {} does not exist", p.display());
                }
            }
            Some(BackendSpec::Command(argv)) if argv.is_empty() => {
                bail!("field backend.command: empty command")
            }
            _ => {}
        }
        Ok(())
    }
}
