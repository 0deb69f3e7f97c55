//! Camera index and image retrieval from the open-data image repository.
//!
//! Index entries are fetched best-effort: a camera that fails does not abort
//! the batch. Image fetches run concurrently with a bounded number in flight;
//! inserting into the archive stays serial.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use reqwest::blocking::Client;
use reqwest::header::{HeaderName, HeaderValue};
use serde::Deserialize;
use trafficpm_core::raster::{ContentHash, Raster, TrafficImage};
use trafficpm_core::Timestamp;

use crate::{iso8601, parse_iso8601};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("transport error fetching {url}: {message}")]
    Transport {
        url: String,
        status: Option<u16>,
        retryable: bool,
        message: String,
    },
    #[error("malformed index payload at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("cannot decode image from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("image from {url} is {actual_w}x{actual_h}, index declared {declared_w}x{declared_h}")]
    Integrity {
        url: String,
        declared_w: u32,
        declared_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub camera_id: String,
    pub image_timestamp: Timestamp,
    pub image_url: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraIndex {
    pub retrieved_at: Timestamp,
    pub entries: Vec<IndexEntry>,
    /// Entries dropped for a missing url, bad dimensions, an unreadable
    /// timestamp, or a repeated camera id.
    pub warnings: usize,
}

impl CameraIndex {
    pub fn retain_cameras(&mut self, camera_ids: &[String]) {
        if camera_ids.is_empty() {
            return;
        }
        self.entries.retain(|e| camera_ids.contains(&e.camera_id));
    }
}

#[derive(Deserialize)]
struct IndexPayload {
    items: Vec<IndexItem>,
}

#[derive(Deserialize)]
struct IndexItem {
    timestamp: Option<String>,
    #[serde(default)]
    cameras: Vec<WireCamera>,
}

#[derive(Deserialize)]
struct WireCamera {
    camera_id: String,
    timestamp: String,
    image: Option<String>,
    image_metadata: Option<WireImageMeta>,
}

#[derive(Deserialize)]
struct WireImageMeta {
    height: i64,
    width: i64,
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

/// Parses an index payload. `requested_at` stands in for the retrieval time
/// when the payload carries none.
pub fn parse_index(bytes: &[u8], requested_at: Timestamp) -> Result<CameraIndex, IngestError> {
    let payload: IndexPayload = serde_json::from_slice(bytes).map_err(|e| IngestError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let retrieved_at = payload
        .items
        .first()
        .and_then(|i| i.timestamp.as_deref())
        .and_then(|t| parse_iso8601(t).ok())
        .unwrap_or(requested_at);
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    let mut warnings = 0;
    for cam in payload.items.into_iter().flat_map(|i| i.cameras) {
        let dims = cam
            .image_metadata
            .as_ref()
            .and_then(|m| Some((u32::try_from(m.width).ok()?, u32::try_from(m.height).ok()?)))
            .filter(|&(w, h)| w > 0 && h > 0);
        let url = cam.image.filter(|u| !u.trim().is_empty());
        let ts = parse_iso8601(&cam.timestamp).ok();
        match (url, dims, ts) {
            (Some(image_url), Some((width, height)), Some(image_timestamp))
                if seen.insert(cam.camera_id.clone()) =>
            {
                entries.push(IndexEntry {
                    camera_id: cam.camera_id,
                    image_timestamp,
                    image_url,
                    width,
                    height,
                });
            }
            _ => {
                tracing::warn!(camera_id = %cam.camera_id, "dropping index entry");
                warnings += 1;
            }
        }
    }
    Ok(CameraIndex {
        retrieved_at,
        entries,
        warnings,
    })
}

/// A decoded frame together with the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct FetchedImage {
    pub image: TrafficImage,
    pub bytes: Vec<u8>,
    pub source_url: String,
    pub fetched_at: Timestamp,
}

/// Hashes the raw bytes, decodes them to RGB8 and checks the declared size.
pub fn decode_image(
    entry: &IndexEntry,
    bytes: Vec<u8>,
    fetched_at: Timestamp,
) -> Result<FetchedImage, IngestError> {
    let content_hash = ContentHash::of(&bytes);
    let decoded = image::load_from_memory(&bytes).map_err(|e| IngestError::Decode {
        url: entry.image_url.clone(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    if rgb.width() != entry.width || rgb.height() != entry.height {
        return Err(IngestError::Integrity {
            url: entry.image_url.clone(),
            declared_w: entry.width,
            declared_h: entry.height,
            actual_w: rgb.width(),
            actual_h: rgb.height(),
        });
    }
    let pixels = Raster::from_rgb8(rgb.width(), rgb.height(), rgb.into_raw()).map_err(|e| {
        IngestError::Decode {
            url: entry.image_url.clone(),
            message: e.to_string(),
        }
    })?;
    Ok(FetchedImage {
        image: TrafficImage {
            camera_id: entry.camera_id.clone(),
            image_timestamp: entry.image_timestamp,
            pixels,
            content_hash,
        },
        bytes,
        source_url: entry.image_url.clone(),
        fetched_at,
    })
}

/// Blocking client for the image repository.
pub struct RepositoryClient {
    http: Client,
    endpoint: String,
    api_key: Option<(HeaderName, HeaderValue)>,
}

/// Environment variable holding the API key value sent under the configured
/// header name.
pub const API_KEY_ENV: &str = "TRAFFICPM_API_KEY";

impl RepositoryClient {
    pub fn new(endpoint: impl Into<String>, key_header: Option<&str>) -> anyhow::Result<Self> {
        let api_key = match (key_header, std::env::var(API_KEY_ENV).ok()) {
            (Some(name), Some(value)) => Some((
                HeaderName::from_bytes(name.as_bytes())?,
                HeaderValue::from_str(&value)?,
            )),
            _ => None,
        };
        let http = Client::builder().timeout(Duration::from_secs(30)).build()?;
        Ok(RepositoryClient {
            http,
            endpoint: endpoint.into(),
            api_key,
        })
    }

    fn get(&self, url: &str) -> Result<Vec<u8>, IngestError> {
        let mut req = self.http.get(url);
        if let Some((name, value)) = &self.api_key {
            req = req.header(name.clone(), value.clone());
        }
        let transport = |e: reqwest::Error| IngestError::Transport {
            url: url.to_owned(),
            status: e.status().map(|s| s.as_u16()),
            retryable: e.is_timeout() || e.is_connect() || e.is_request(),
            message: e.to_string(),
        };
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(IngestError::Transport {
                url: url.to_owned(),
                status: Some(status.as_u16()),
                retryable: status.is_server_error() || status.as_u16() == 429,
                message: format!("HTTP {status}"),
            });
        }
        Ok(resp.bytes().map_err(transport)?.to_vec())
    }

    pub fn index_url(&self, at: Timestamp) -> String {
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        format!(
            "{}{sep}date_time={}",
            self.endpoint,
            at.format("%Y-%m-%dT%H:%M:%SZ")
        )
    }

    pub fn fetch_index(&self, at: Timestamp) -> Result<CameraIndex, IngestError> {
        let body = self.get(&self.index_url(at))?;
        parse_index(&body, at)
    }

    pub fn fetch_image(&self, entry: &IndexEntry) -> Result<FetchedImage, IngestError> {
        let bytes = self.get(&entry.image_url)?;
        decode_image(entry, bytes, Utc::now())
    }

    /// Fetches every entry with at most `max_in_flight` requests at once.
    /// Results keep the entries' order.
    pub fn fetch_all(
        &self,
        entries: &[IndexEntry],
        max_in_flight: usize,
    ) -> Vec<Result<FetchedImage, IngestError>> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| entries.par_iter().map(|e| self.fetch_image(e)).collect())
    }
}

/// One recorded image response, replayable without network access.
#[derive(Debug, Clone, Deserialize, serde::Serialize, PartialEq)]
pub struct ReplayEntry {
    pub camera_id: String,
    pub image_timestamp: String,
    pub source_url: String,
    pub fetched_at: String,
    pub width: u32,
    pub height: u32,
    /// Response body file, relative to the log's directory.
    pub body: String,
}

/// Reads a fetch log (one JSON object per line) and decodes each response.
/// Unreadable or undecodable responses are returned as errors in place.
pub fn replay_log(path: &Path) -> Result<Vec<Result<FetchedImage, IngestError>>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_owned(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let e: ReplayEntry = serde_json::from_str(line).map_err(|err| IngestError::Parse {
            offset: start + err.column().saturating_sub(1),
            message: format!("{}: {err}", path.display()),
        })?;
        out.push(replay_one(base, &e));
    }
    Ok(out)
}

fn replay_one(base: &Path, e: &ReplayEntry) -> Result<FetchedImage, IngestError> {
    let parse_ts = |s: &str| {
        parse_iso8601(s).map_err(|err| IngestError::Parse {
            offset: 0,
            message: format!("timestamp {s:?}: {err}"),
        })
    };
    let entry = IndexEntry {
        camera_id: e.camera_id.clone(),
        image_timestamp: parse_ts(&e.image_timestamp)?,
        image_url: e.source_url.clone(),
        width: e.width,
        height: e.height,
    };
    let body_path = base.join(&e.body);
    let bytes = std::fs::read(&body_path).map_err(|source| IngestError::Io {
        path: body_path,
        source,
    })?;
    decode_image(&entry, bytes, parse_ts(&e.fetched_at)?)
}

impl ReplayEntry {
    pub fn new(
        entry: &IndexEntry,
        fetched_at: Timestamp,
        body: impl Into<String>,
    ) -> ReplayEntry {
        ReplayEntry {
            camera_id: entry.camera_id.clone(),
            image_timestamp: iso8601(entry.image_timestamp),
            source_url: entry.image_url.clone(),
            fetched_at: iso8601(fetched_at),
            width: entry.width,
            height: entry.height,
            body: body.into(),
        }
    }
}
