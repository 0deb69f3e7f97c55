//! Batch pipeline from roadside traffic-camera images to vehicle counts, fused
//! with particulate-matter sensor data.
//!
//! The algorithms live in [`trafficpm_core`]; this crate owns the HTTP
//! repository client, the on-disk archive, detector transports, every file
//! format, and the `trafficpm` command line.

pub mod archive;
pub mod cli;
pub mod config;
pub mod detector;
pub mod formats;
pub mod ingest;
pub mod pipeline;
pub mod report;

pub use trafficpm_core as core;

/// Renders a timestamp as ISO-8601 UTC with a `Z` suffix.
pub fn iso8601(t: trafficpm_core::Timestamp) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

/// Parses an ISO-8601 / RFC 3339 timestamp with any offset into UTC.
pub fn parse_iso8601(s: &str) -> Result<trafficpm_core::Timestamp, chrono::ParseError> {
    chrono::DateTime::parse_from_rfc3339(s.trim()).map(|t| t.with_timezone(&chrono::Utc))
}
