//! Duplicate detection for archived frames.
//!
//! The repository re-serves the same encoded frame when a camera has not
//! captured a new one, so duplicates are exact byte repeats. The key is the
//! pair (camera id, digest of the encoded bytes).

use alloc::collections::BTreeSet;
use alloc::string::String;

use crate::raster::ContentHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Duplicate,
}

#[derive(Debug, Clone, Default)]
pub struct DedupIndex {
    seen: BTreeSet<(String, ContentHash)>,
}

impl DedupIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, camera_id: &str, hash: &ContentHash) -> bool {
        // BTreeSet lookups need an owned tuple key.
        self.seen.contains(&(String::from(camera_id), *hash))
    }

    /// Records the key and reports whether it was new.
    pub fn insert(&mut self, camera_id: &str, hash: ContentHash) -> InsertOutcome {
        if self.seen.insert((String::from(camera_id), hash)) {
            InsertOutcome::Inserted
        } else {
            InsertOutcome::Duplicate
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}
