//! Instants, local calendar days and the configured UTC offset.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveTime, SecondsFormat, Utc};

use crate::error::{invalid_config, invalid_input, Error, Result};

/// Seconds since the Unix epoch (UTC).
pub type Timestamp = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_HOUR: f64 = 3_600.0;

/// Calendar day in local time, counted from 1970-01-01.
pub type DayIndex = i64;

/// Fixed UTC offset used for calendar days and all reported times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalZone(FixedOffset);

impl LocalZone {
    pub fn utc() -> Self {
        Self(FixedOffset::east_opt(0).unwrap())
    }

    /// Default zone of the Singapore case (UTC+8).
    pub fn singapore() -> Self {
        Self(FixedOffset::east_opt(8 * 3600).unwrap())
    }

    pub fn from_offset_seconds(seconds: i32) -> Result<Self> {
        FixedOffset::east_opt(seconds)
            .map(Self)
            .ok_or_else(|| invalid_config(format!("UTC offset {seconds}s out of range")))
    }

    pub fn offset_seconds(&self) -> i64 {
        self.0.local_minus_utc() as i64
    }

    pub fn day_of(&self, ts: Timestamp) -> DayIndex {
        (ts + self.offset_seconds()).div_euclid(SECONDS_PER_DAY)
    }

    /// UTC instant of local midnight starting `day`.
    pub fn day_start(&self, day: DayIndex) -> Timestamp {
        day * SECONDS_PER_DAY - self.offset_seconds()
    }

    /// Seconds elapsed since local midnight.
    pub fn seconds_of_day(&self, ts: Timestamp) -> i64 {
        (ts + self.offset_seconds()).rem_euclid(SECONDS_PER_DAY)
    }

    pub fn date(&self, day: DayIndex) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt((day + 719_163) as i32).expect("day in range")
    }

    pub fn day_of_date(&self, date: NaiveDate) -> DayIndex {
        chrono::Datelike::num_days_from_ce(&date) as i64 - 719_163
    }

    /// RFC 3339 in the local offset, whole seconds.
    pub fn format(&self, ts: Timestamp) -> String {
        DateTime::from_timestamp(ts, 0)
            .expect("timestamp in range")
            .with_timezone(&self.0)
            .to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    /// Formats an instant given as local day plus fractional seconds of day,
    /// rounded to the nearest second.
    pub fn format_day_offset(&self, day: DayIndex, seconds: f64) -> String {
        self.format(self.day_start(day) + seconds.round() as i64)
    }
}

impl Default for LocalZone {
    fn default() -> Self {
        Self::singapore()
    }
}

impl fmt::Display for LocalZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for LocalZone {
    type Err = Error;

    /// Accepts `UTC`, `Z`, `+08:00`, `-0530`, `UTC+8`, `UTC-05:30`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let rest = t
            .strip_prefix("UTC")
            .or_else(|| t.strip_prefix("utc"))
            .unwrap_or(t);
        if rest.is_empty() || rest == "Z" {
            return Ok(Self::utc());
        }
        let bad = || invalid_config(format!("unrecognised time zone {s:?}"));
        let (sign, body) = match rest.as_bytes()[0] {
            b'+' => (1, &rest[1..]),
            b'-' => (-1, &rest[1..]),
            _ => return Err(bad()),
        };
        let (hours, minutes) = if let Some((h, m)) = body.split_once(':') {
            (h, m)
        } else if body.len() == 4 {
            body.split_at(2)
        } else {
            (body, "0")
        };
        let hours: i32 = hours.parse().map_err(|_| bad())?;
        let minutes: i32 = minutes.parse().map_err(|_| bad())?;
        if !(0..=14).contains(&hours) || !(0..60).contains(&minutes) {
            return Err(bad());
        }
        Self::from_offset_seconds(sign * (hours * 3600 + minutes * 60))
    }
}

/// Parses an RFC 3339 / ISO-8601 instant such as `2020-09-01T08:00:00Z`.
pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|dt| dt.timestamp())
        .map_err(|e| invalid_input(format!("bad timestamp {s:?}: {e}")))
}

pub fn format_utc(ts: Timestamp) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .expect("timestamp in range")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses `HH:MM` (or `HH:MM:SS`) into seconds after midnight. `24:00` is
/// accepted as the end of the day.
pub fn parse_time_of_day(s: &str) -> Result<u32> {
    let t = s.trim();
    if t == "24:00" || t == "24:00:00" {
        return Ok(SECONDS_PER_DAY as u32);
    }
    let time = NaiveTime::parse_from_str(t, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(t, "%H:%M:%S"))
        .map_err(|_| invalid_input(format!("bad time of day {s:?}")))?;
    Ok(chrono::Timelike::num_seconds_from_midnight(&time))
}

pub fn format_time_of_day(seconds: u32) -> String {
    format!("{:02}:{:02}", seconds / 3600, (seconds % 3600) / 60)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zone_parsing() {
        assert_eq!("UTC".parse::<LocalZone>().unwrap(), LocalZone::utc());
        assert_eq!("+08:00".parse::<LocalZone>().unwrap(), LocalZone::singapore());
        assert_eq!("UTC+8".parse::<LocalZone>().unwrap(), LocalZone::singapore());
        assert_eq!(
            "-0530".parse::<LocalZone>().unwrap().offset_seconds(),
            -(5 * 3600 + 30 * 60)
        );
        assert!("Mars/Olympus".parse::<LocalZone>().is_err());
    }

    #[test]
    fn local_days() {
        let tz = LocalZone::singapore();
        let ts = parse_timestamp("2020-09-01T15:59:59Z").unwrap();
        let next = parse_timestamp("2020-09-01T16:00:00Z").unwrap();
        assert_eq!(tz.day_of(next), tz.day_of(ts) + 1);
        assert_eq!(tz.day_start(tz.day_of(next)), next);
        assert_eq!(tz.seconds_of_day(next), 0);
        assert_eq!(tz.date(tz.day_of(ts)).to_string(), "2020-09-01");
        assert_eq!(tz.format(next), "2020-09-02T00:00:00+08:00");
        assert_eq!(tz.day_of_date(tz.date(18_000)), 18_000);
    }

    #[test]
    fn time_of_day() {
        assert_eq!(parse_time_of_day("09:00").unwrap(), 9 * 3600);
        assert_eq!(parse_time_of_day("17:30:15").unwrap(), 17 * 3600 + 30 * 60 + 15);
        assert_eq!(parse_time_of_day("24:00").unwrap(), 86_400);
        assert!(parse_time_of_day("25:00").is_err());
        assert_eq!(format_time_of_day(9 * 3600 + 30 * 60), "09:30");
    }
}
