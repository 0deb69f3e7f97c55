//! Local image archive: an append-only `ledger.csv` plus one image file per
//! record at `<camera_id>/<YYYYMMDDTHHMMSSZ>_<hash12>.jpg`.
//!
//! The ledger is authoritative. An image file with no ledger line (left by a
//! crash between the two writes) is ignored and overwritten on the next
//! insert of the same frame.

use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use trafficpm_core::dedup::{DedupIndex, InsertOutcome};
use trafficpm_core::raster::{ContentHash, Raster, TrafficImage};
use trafficpm_core::Timestamp;

use crate::ingest::FetchedImage;
use crate::{iso8601, parse_iso8601};

pub const LEDGER_FILE: &str = "ledger.csv";
pub const LEDGER_HEADER: &str = "camera_id,image_timestamp,content_hash,fetched_at,source_url";
const HASH_PREFIX_LEN: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Ledger {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("camera id {0:?} is not usable as a directory name")]
    CameraId(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveRecord {
    pub camera_id: String,
    pub image_timestamp: Timestamp,
    pub content_hash: ContentHash,
    pub fetched_at: Timestamp,
    pub source_url: String,
}

impl ArchiveRecord {
    /// Image path relative to the archive root.
    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(&self.camera_id).join(format!("{}.jpg", self.file_stem()))
    }

    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}",
            self.image_timestamp.format("%Y%m%dT%H%M%SZ"),
            self.content_hash.hex_prefix(HASH_PREFIX_LEN)
        )
    }
}

fn valid_camera_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub struct Archive {
    root: PathBuf,
    ledger: File,
    index: DedupIndex,
    records: Vec<ArchiveRecord>,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive")
            .field("root", &self.root)
            .field("records", &self.records.len())
            .finish()
    }
}

impl Archive {
    /// Opens or creates an archive. A partially written trailing ledger line
    /// is cut off.
    pub fn open(root: impl AsRef<Path>) -> Result<Archive, ArchiveError> {
        let root = root.as_ref().to_owned();
        let ledger_path = root.join(LEDGER_FILE);
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| ArchiveError::Io { path, source }
        };
        fs::create_dir_all(&root).map_err(io(&root))?;
        let mut ledger = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&ledger_path)
            .map_err(io(&ledger_path))?;
        let text = fs::read(&ledger_path).map_err(io(&ledger_path))?;
        let complete = match text.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            tracing::warn!(path = %ledger_path.display(), bytes = text.len() - complete, "truncating partial ledger line");
            ledger.set_len(complete as u64).map_err(io(&ledger_path))?;
            ledger.seek(SeekFrom::End(0)).map_err(io(&ledger_path))?;
        }
        let mut archive = Archive {
            root,
            ledger,
            index: DedupIndex::new(),
            records: Vec::new(),
        };
        if complete == 0 {
            archive.append_line(&format!("{LEDGER_HEADER}\n"))?;
        } else {
            archive.load(&text[..complete], &ledger_path)?;
        }
        Ok(archive)
    }

    fn load(&mut self, text: &[u8], path: &Path) -> Result<(), ArchiveError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
        let bad = |line: u64, message: String| ArchiveError::Ledger {
            path: path.to_owned(),
            line,
            message,
        };
        let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != LEDGER_HEADER {
            return Err(bad(1, format!("header must be {LEDGER_HEADER:?}")));
        }
        for row in rdr.records() {
            let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != 5 {
                return Err(bad(line, format!("expected 5 fields, found {}", row.len())));
            }
            let ts = |i: usize, name: &str| {
                parse_iso8601(&row[i]).map_err(|e| bad(line, format!("{name}: {e}")))
            };
            let rec = ArchiveRecord {
                camera_id: row[0].to_owned(),
                image_timestamp: ts(1, "image_timestamp")?,
                content_hash: row[2]
                    .parse()
                    .map_err(|_| bad(line, "content_hash: not a 64-digit hex digest".into()))?,
                fetched_at: ts(3, "fetched_at")?,
                source_url: row[4].to_owned(),
            };
            if self.index.insert(&rec.camera_id, rec.content_hash) == InsertOutcome::Inserted {
                self.records.push(rec);
            }
        }
        Ok(())
    }

    fn append_line(&mut self, line: &str) -> Result<(), ArchiveError> {
        let path = self.ledger_path();
        let io = |source| ArchiveError::Io {
            path: path.clone(),
            source,
        };
        let before = self.ledger.metadata().map_err(io)?.len();
        let written = self
            .ledger
            .write_all(line.as_bytes())
            .and_then(|_| self.ledger.sync_data());
        if let Err(e) = written {
            // Leave the ledger as it was before this record.
            let _ = self.ledger.set_len(before);
            return Err(io(e));
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join(LEDGER_FILE)
    }

    /// Records in insertion order.
    pub fn records(&self) -> &[ArchiveRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &ArchiveRecord) -> PathBuf {
        self.root.join(record.relative_path())
    }

    /// Stores the frame unless the same bytes are already archived for its
    /// camera. On error the archive is unchanged.
    pub fn dedup_insert(&mut self, fetched: &FetchedImage) -> Result<InsertOutcome, ArchiveError> {
        let img = &fetched.image;
        if self.index.contains(&img.camera_id, &img.content_hash) {
            return Ok(InsertOutcome::Duplicate);
        }
        if !valid_camera_id(&img.camera_id) {
            return Err(ArchiveError::CameraId(img.camera_id.clone()));
        }
        let rec = ArchiveRecord {
            camera_id: img.camera_id.clone(),
            image_timestamp: img.image_timestamp,
            content_hash: img.content_hash,
            fetched_at: fetched.fetched_at,
            source_url: fetched.source_url.clone(),
        };
        let path = self.image_path(&rec);
        let io = |source| ArchiveError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(path.parent().expect("image path has a parent")).map_err(io)?;
        let tmp = path.with_extension("jpg.part");
        fs::write(&tmp, &fetched.bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(io)?;

        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record([
            rec.camera_id.as_str(),
            &iso8601(rec.image_timestamp),
            &rec.content_hash.to_string(),
            &iso8601(rec.fetched_at),
            &rec.source_url,
        ])
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| ArchiveError::Ledger {
            path: self.ledger_path(),
            line: 0,
            message: e.to_string(),
        })?;
        let line = String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8 fields");
        self.append_line(&line)?;
        self.index.insert(&rec.camera_id, rec.content_hash);
        self.records.push(rec);
        Ok(InsertOutcome::Inserted)
    }

    /// Decodes an archived frame back into a [`TrafficImage`].
    pub fn load_image(&self, record: &ArchiveRecord) -> Result<TrafficImage, ArchiveError> {
        let path = self.image_path(record);
        let bytes = fs::read(&path).map_err(|source| ArchiveError::Io {
            path: path.clone(),
            source,
        })?;
        let image_err = |message: String| ArchiveError::Image {
            path: path.clone(),
            message,
        };
        let content_hash = ContentHash::of(&bytes);
        if content_hash != record.content_hash {
            return Err(image_err("content hash does not match the ledger".into()));
        }
        let rgb = image::load_from_memory(&bytes)
            .map_err(|e| image_err(e.to_string()))?
            .to_rgb8();
        let pixels = Raster::from_rgb8(rgb.width(), rgb.height(), rgb.into_raw())
            .map_err(|e| image_err(e.to_string()))?;
        Ok(TrafficImage {
            camera_id: record.camera_id.clone(),
            image_timestamp: record.image_timestamp,
            pixels,
            content_hash,
        })
    }
}
