//! Clock conventions.
//!
//! Simulation time is `f64` seconds since the Unix epoch, read as a naive
//! local clock (no time zone shifts). Weekly bins are anchored at Monday 00:00.

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Utc, Weekday};

use crate::error::{Error, Result};

pub const MINUTE: f64 = 60.0;
pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 86_400.0;
pub const WEEK: f64 = 604_800.0;
pub const MINUTES_PER_WEEK: u32 = 10_080;

/// Bin width of the travel-time cache, in minutes.
pub const CACHE_BIN_MINUTES: u32 = 30;

// 1970-01-01 was a Thursday; the first Monday is four days later.
const FIRST_MONDAY: f64 = 4.0 * DAY;

pub fn parse_timestamp(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(to_seconds(&dt.naive_local()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(to_seconds(&dt));
        }
    }
    Err(Error::Format(format!("malformed timestamp {s:?}")))
}

fn to_seconds(dt: &NaiveDateTime) -> f64 {
    let utc = dt.and_utc();
    utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9
}

fn to_datetime(t: f64) -> NaiveDateTime {
    let secs = t.floor();
    let nanos = ((t - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::<Utc>::from_timestamp(secs as i64, nanos)
        .unwrap_or_default()
        .naive_utc()
}

/// ISO-8601 with millisecond resolution.
pub fn format_timestamp(t: f64) -> String {
    to_datetime(t).format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

/// One of six four-hour bins starting at midnight.
pub fn time_of_day_bin(t: f64) -> usize {
    (to_datetime(t).hour() / 4) as usize
}

pub fn is_weekend(t: f64) -> bool {
    matches!(to_datetime(t).weekday(), Weekday::Sat | Weekday::Sun)
}

/// Meteorological season: 0 winter (Dec-Feb), 1 spring, 2 summer, 3 fall.
pub fn season(t: f64) -> usize {
    match to_datetime(t).month() {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

pub fn day_index(t: f64) -> i64 {
    (t / DAY).floor() as i64
}

/// Seconds since the most recent Monday 00:00.
pub fn week_offset(t: f64) -> f64 {
    (t - FIRST_MONDAY).rem_euclid(WEEK)
}

/// Half-open weekly bin index for a bin width in minutes.
pub fn weekly_bin(t: f64, bin_width_min: u32) -> usize {
    let width = f64::from(bin_width_min) * MINUTE;
    let bins = (MINUTES_PER_WEEK / bin_width_min) as usize;
    ((week_offset(t) / width).floor() as usize).min(bins - 1)
}

/// Start time of the weekly bin containing `t`, in the same week as `t`.
pub fn bin_start(t: f64, bin_width_min: u32) -> f64 {
    let width = f64::from(bin_width_min) * MINUTE;
    t - week_offset(t) + weekly_bin(t, bin_width_min) as f64 * width
}
