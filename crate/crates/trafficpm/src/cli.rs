//! `trafficpm` command line. Exit codes: 0 success, 1 runtime or data
//! error, 2 usage error.

use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use trafficpm_core::{BinInterval, Timestamp};

use crate::archive::Archive;
use crate::config::{BackendSpec, PipelineConfig};
use crate::detector::{load_mock_fixture, serve_mock_stdio, Backend};
use crate::pipeline::{self, COUNTS_FILE, DETECTIONS_FILE, METRICS_FILE};

#[derive(Debug, Parser)]
#[command(name = "trafficpm", version, about = "Traffic-camera vehicle counts against roadside PM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config JSON. Relative paths inside it resolve against its directory.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Archive directory (overrides `archive_dir`).
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Schedule start, ISO-8601.
    #[arg(long, value_parser = parse_ts, requires = "to")]
    pub from: Option<Timestamp>,
    /// Schedule end (exclusive), ISO-8601.
    #[arg(long, value_parser = parse_ts, requires = "from")]
    pub to: Option<Timestamp>,
    /// Poll interval in seconds (overrides `fetch_interval_s`).
    #[arg(long)]
    pub interval: Option<u32>,
    /// Index endpoint (overrides `api.endpoint`).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Insert responses from a recorded fetch log instead of polling.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    pub replay: Option<PathBuf>,
    /// Also record every live response as a replayable log in this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// `mock:<fixture>`, `cmd:<program> [args]` or an http(s) URL (overrides `backend`).
    #[arg(long)]
    pub backend: Option<BackendSpec>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Counts CSV (default: counts.csv in the output directory).
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// PM sensor CSV; repeat for each file.
    #[arg(long = "pm", required = true)]
    pub pm: Vec<PathBuf>,
    /// Date to leave out of the correlation; repeatable (adds to `excluded_dates`).
    #[arg(long = "exclude")]
    pub exclude: Vec<NaiveDate>,
    /// Bin width in seconds (overrides `bin_interval_s`).
    #[arg(long)]
    pub bin_interval: Option<u32>,
    /// Fraction of expected samples a PM bin needs (overrides `min_coverage`).
    #[arg(long)]
    pub min_coverage: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth labels JSON.
    #[arg(long, required = true)]
    pub labels: Option<PathBuf>,
    /// Detections JSONL (default: detections.jsonl in the output directory).
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Matching IoU threshold (overrides `eval_iou_threshold`).
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Poll the image repository (or replay a fetch log) into the archive.
    Fetch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: FetchArgs,
    },
    /// Detect vehicles in every archived image and write binned counts.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: DetectArgs,
    },
    /// Fuse counts with PM data and write boxplot, scatter and report files.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: AnalyzeArgs,
    },
    /// Score raw and filtered detections against hand labels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// fetch, detect, analyze, and eval when labels are given.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fetch: FetchArgs,
        #[command(flatten)]
        detect: DetectArgs,
        #[command(flatten)]
        analyze: AnalyzeArgs,
        /// Ground-truth labels JSON.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Matching IoU threshold.
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Answer detector requests on stdin/stdout from a mock fixture.
    ServeMock {
        #[arg(long)]
        fixture: PathBuf,
    },
}

fn parse_ts(s: &str) -> Result<Timestamp, String> {
    crate::parse_iso8601(s).map_err(|e| format!("{s:?} is not an ISO-8601 timestamp: {e}"))
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    // Flag paths are relative to the working directory, not the config.
    if let Some(a) = &common.archive {
        cfg.archive_dir = absolute(a)?;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = absolute(o)?;
    }
    Ok(cfg)
}

fn do_fetch(cfg: &mut PipelineConfig, args: &FetchArgs) -> anyhow::Result<()> {
    if let Some(i) = args.interval {
        cfg.fetch_interval_s = i;
    }
    if let Some(e) = &args.endpoint {
        cfg.api.endpoint = e.clone();
    }
    cfg.validate()?;
    let mut archive = Archive::open(cfg.archive_dir())?;
    let stats = match (&args.replay, args.from, args.to) {
        (Some(log), _, _) => pipeline::fetch_replay(&mut archive, log)?,
        (None, Some(from), Some(to)) => {
            pipeline::fetch_live(cfg, &mut archive, from, to, args.record.as_deref())?
        }
        _ => bail!("fetch needs --from and --to, or --replay"),
    };
    tracing::info!(
        archive = %archive.root().display(),
        records = archive.len(),
        inserted = stats.inserted,
        duplicates = stats.duplicates,
        failures = stats.failures,
        index_warnings = stats.index_warnings,
        "fetch finished"
    );
    Ok(())
}

fn do_detect(cfg: &mut PipelineConfig, args: &DetectArgs) -> anyhow::Result<()> {
    if let Some(b) = &args.backend {
        cfg.backend = Some(match b {
            BackendSpec::Mock(p) => BackendSpec::Mock(absolute(p)?),
            other => other.clone(),
        });
    }
    cfg.validate()?;
    let spec = cfg
        .backend
        .clone()
        .context("no detector backend: set `backend` in the config or pass --backend")?;
    let backend = Backend::from_spec(&spec, cfg)?;
    let archive_dir = cfg.archive_dir();
    if !archive_dir.join(crate::archive::LEDGER_FILE).is_file() {
        bail!("archive {} has no ledger; run fetch first", archive_dir.display());
    }
    let archive = Archive::open(&archive_dir)?;
    pipeline::run_detect(cfg, &archive, &backend, &cfg.output_dir())?;
    Ok(())
}

fn do_analyze(cfg: &mut PipelineConfig, args: &AnalyzeArgs) -> anyhow::Result<()> {
    if let Some(i) = args.bin_interval {
        cfg.bin_interval_s = i;
    }
    if let Some(c) = args.min_coverage {
        cfg.min_coverage = c;
    }
    for d in &args.exclude {
        if !cfg.excluded_dates.contains(d) {
            cfg.excluded_dates.push(*d);
        }
    }
    cfg.validate()?;
    let out = cfg.output_dir();
    let counts = match &args.counts {
        Some(c) => c.clone(),
        None => out.join(COUNTS_FILE),
    };
    let interval: BinInterval = cfg.interval()?;
    pipeline::run_analyze(
        &counts,
        &args.pm,
        interval,
        cfg.min_samples()?,
        &cfg.excluded_dates,
        &out,
    )?;
    Ok(())
}

fn do_eval(
    cfg: &mut PipelineConfig,
    labels: &Path,
    detections: Option<&Path>,
    iou: Option<f64>,
) -> anyhow::Result<()> {
    if let Some(t) = iou {
        cfg.eval_iou_threshold = t;
    }
    cfg.validate()?;
    let out = cfg.output_dir();
    let detections = detections.map_or_else(|| out.join(DETECTIONS_FILE), Path::to_owned);
    let result = pipeline::run_eval(labels, &detections, cfg.eval_iou_threshold)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(METRICS_FILE);
    std::fs::write(&path, &result.json).with_context(|| format!("writing {}", path.display()))?;
    tracing::info!(images = result.n_images, out = %path.display(), "eval finished");
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fetch { common, args } => do_fetch(&mut load_config(&common)?, &args),
        Command::Detect { common, args } => do_detect(&mut load_config(&common)?, &args),
        Command::Analyze { common, args } => do_analyze(&mut load_config(&common)?, &args),
        Command::Eval { common, args } => {
            let labels = args.labels.expect("required by clap");
            do_eval(&mut load_config(&common)?, &labels, args.detections.as_deref(), args.iou)
        }
        Command::Run {
            common,
            fetch,
            detect,
            analyze,
            labels,
            iou,
        } => {
            let mut cfg = load_config(&common)?;
            do_fetch(&mut cfg, &fetch)?;
            do_detect(&mut cfg, &detect)?;
            do_analyze(&mut cfg, &analyze)?;
            if let Some(l) = labels {
                do_eval(&mut cfg, &l, None, iou)?;
            }
            Ok(())
        }
        Command::ServeMock { fixture } => {
            let mock = load_mock_fixture(&fixture)?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve_mock_stdio(&mock, BufReader::new(stdin.lock()), stdout.lock())
                .context("serving detector protocol")?;
            Ok(())
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            tracing::error!(error = %format!("{e:#}"), "failed");
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["trafficpm", "detect", "--bogus"]), 2);
        assert_eq!(run(["trafficpm"]), 2);
    }

    #[test]
    fn missing_pm_file_is_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let counts = dir.path().join("counts.csv");
        std::fs::write(&counts, format!("{}\n", crate::formats::COUNTS_HEADER)).unwrap();
        let code = run([
            "trafficpm".as_ref(),
            "analyze".as_ref(),
            "--counts".as_ref(),
            counts.as_os_str(),
            "--pm".as_ref(),
            dir.path().join("missing.csv").as_os_str(),
        ]);
        assert_eq!(code, 1);
    }
}
