//! Whole-second UTC timestamps: integers in image headers, ISO-8601 with a
//! `Z` suffix in documents.

use std::time::{SystemTime, UNIX_EPOCH};

use chrono::{DateTime, NaiveDateTime, Utc};

const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn now_unix() -> i64 {
    match SystemTime::now().duration_since(UNIX_EPOCH) {
        Ok(d) => d.as_secs() as i64,
        Err(e) => -(e.duration().as_secs() as i64),
    }
}

/// Nanoseconds since the Unix epoch, for wall-clock samples.
pub fn now_unix_nanos() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

pub fn to_iso8601(secs: i64) -> String {
    DateTime::<Utc>::from_timestamp(secs, 0)
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH)
        .format(ISO_FORMAT)
        .to_string()
}

pub fn nanos_to_iso8601(nanos: u64) -> String {
    to_iso8601((nanos / 1_000_000_000) as i64)
}

pub fn parse_iso8601(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s, ISO_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_with_z_suffix() {
        assert_eq!(to_iso8601(0), "1970-01-01T00:00:00Z");
        assert_eq!(to_iso8601(1_577_836_800), "2020-01-01T00:00:00Z");
    }

    #[test]
    fn parse_inverts_render() {
        for t in [0, 1, 86_399, 1_700_000_000, 4_102_444_800] {
            assert_eq!(parse_iso8601(&to_iso8601(t)), Some(t));
        }
        assert_eq!(parse_iso8601("2020-01-01 00:00:00"), None);
    }
}
