//! Location records to stays, trajectories and the active-user filter.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid_config, invalid_input, Result};
use crate::geo::{CellId, GridSpec};
use crate::time::{format_utc, parse_timestamp, DayIndex, LocalZone, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct LocationRecord {
    pub user_id: String,
    pub timestamp: Timestamp,
    pub lat: f64,
    pub lon: f64,
}

impl LocationRecord {
    pub fn new(user_id: impl Into<String>, timestamp: Timestamp, lat: f64, lon: f64) -> Self {
        Self {
            user_id: user_id.into(),
            timestamp,
            lat,
            lon,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stay {
    pub user_id: String,
    pub cell: CellId,
    pub arrival: Timestamp,
    pub departure: Timestamp,
}

impl Stay {
    pub fn duration(&self) -> i64 {
        self.departure - self.arrival
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub user_id: String,
    pub stays: Vec<Stay>,
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Minimum stay time, seconds.
    pub tau: i64,
    pub min_consecutive_days: u32,
    pub grid: GridSpec,
    /// Zone in which calendar days are evaluated.
    pub zone: LocalZone,
}

impl IngestConfig {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            tau: 3600,
            min_consecutive_days: 5,
            grid,
            zone: LocalZone::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0 {
            return Err(invalid_config("tau must be positive"));
        }
        if self.min_consecutive_days == 0 {
            return Err(invalid_config("min_consecutive_days must be at least 1"));
        }
        Ok(())
    }
}

/// Counters reported by the ingest stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct IngestStats {
    pub records: u64,
    pub out_of_bounds: u64,
    pub users_seen: u64,
    pub users_with_stays: u64,
    pub users_retained: u64,
    pub stays: u64,
}

impl IngestStats {
    fn merge(mut self, other: &Self) -> Self {
        self.records += other.records;
        self.out_of_bounds += other.out_of_bounds;
        self.users_seen += other.users_seen;
        self.users_with_stays += other.users_with_stays;
        self.users_retained += other.users_retained;
        self.stays += other.stays;
        self
    }
}

fn check_single_user_sorted(records: &[LocationRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.user_id != first.user_id) {
            return Err(invalid_input("records from more than one user"));
        }
    }
    if records.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(invalid_input("records are not sorted by timestamp"));
    }
    Ok(())
}

/// Stays of one user, plus the number of records dropped for lying outside
/// the grid.
pub fn extract_stays_counted(
    records: &[LocationRecord],
    cfg: &IngestConfig,
) -> Result<(Vec<Stay>, u64)> {
    check_single_user_sorted(records)?;
    let mut out_of_bounds = 0;
    let mut stays: Vec<Stay> = Vec::new();
    // Current run: (cell, first ping, last ping).
    let mut run: Option<(CellId, Timestamp, Timestamp)> = None;

    let close = |run: (CellId, Timestamp, Timestamp), stays: &mut Vec<Stay>| {
        let (cell, first, last) = run;
        if last - first >= cfg.tau {
            stays.push(Stay {
                user_id: records[0].user_id.clone(),
                cell,
                arrival: first,
                departure: last,
            });
        }
    };

    for record in records {
        let Some(cell) = cfg.grid.locate(record.lat, record.lon)? else {
            out_of_bounds += 1;
            continue;
        };
        run = match run {
            Some((c, first, _)) if c == cell => Some((c, first, record.timestamp)),
            Some(done) => {
                close(done, &mut stays);
                Some((cell, record.timestamp, record.timestamp))
            }
            None => Some((cell, record.timestamp, record.timestamp)),
        };
    }
    if let Some(done) = run {
        close(done, &mut stays);
    }
    Ok((stays, out_of_bounds))
}

/// Maximal same-cell runs of one user's time-sorted records that last at
/// least `tau`. Records outside the grid are ignored.
pub fn extract_stays(records: &[LocationRecord], cfg: &IngestConfig) -> Result<Vec<Stay>> {
    extract_stays_counted(records, cfg).map(|(stays, _)| stays)
}

/// Orders stays by arrival and merges same-cell neighbours whose gap is
/// shorter than `tau`.
pub fn build_trajectory(
    user_id: impl Into<String>,
    mut stays: Vec<Stay>,
    tau: i64,
) -> Result<Trajectory> {
    let user_id = user_id.into();
    if stays.iter().any(|s| s.user_id != user_id) {
        return Err(invalid_input("stays from more than one user"));
    }
    if stays.iter().any(|s| s.departure < s.arrival) {
        return Err(invalid_input("stay departs before it arrives"));
    }
    stays.sort_by_key(|s| (s.arrival, s.departure, s.cell));
    if stays.windows(2).any(|w| w[1].arrival < w[0].departure) {
        return Err(invalid_input("overlapping stays"));
    }
    let mut merged: Vec<Stay> = Vec::with_capacity(stays.len());
    for stay in stays {
        match merged.last_mut() {
            Some(prev) if prev.cell == stay.cell && stay.arrival - prev.departure < tau => {
                prev.departure = stay.departure;
            }
            _ => merged.push(stay),
        }
    }
    Ok(Trajectory {
        user_id,
        stays: merged,
    })
}

/// Local calendar days touched by at least one stay.
pub fn active_days(trajectory: &Trajectory, zone: LocalZone) -> BTreeSet<DayIndex> {
    let mut days = BTreeSet::new();
    for stay in &trajectory.stays {
        let first = zone.day_of(stay.arrival);
        // A stay ending exactly at midnight does not touch the next day.
        let last = zone.day_of((stay.departure - 1).max(stay.arrival));
        days.extend(first..=last);
    }
    days
}

/// Whether `days` contains a run of at least `k` consecutive days.
pub fn has_consecutive_run(days: &BTreeSet<DayIndex>, k: u32) -> bool {
    if k == 0 {
        return true;
    }
    let mut run = 0u32;
    let mut prev: Option<DayIndex> = None;
    for &day in days {
        run = match prev {
            Some(p) if day == p + 1 => run + 1,
            _ => 1,
        };
        if run >= k {
            return true;
        }
        prev = Some(day);
    }
    false
}

/// Users having stays on at least `min_consecutive_days` consecutive days.
pub fn filter_active_users(trajectories: &[Trajectory], cfg: &IngestConfig) -> BTreeSet<String> {
    trajectories
        .iter()
        .filter(|t| has_consecutive_run(&active_days(t, cfg.zone), cfg.min_consecutive_days))
        .map(|t| t.user_id.clone())
        .collect()
}

fn process_sorted_user(
    records: &[LocationRecord],
    cfg: &IngestConfig,
) -> Result<(Trajectory, IngestStats)> {
    let user_id = records.first().map(|r| r.user_id.clone()).unwrap_or_default();
    let (stays, out_of_bounds) = extract_stays_counted(records, cfg)?;
    let trajectory = build_trajectory(user_id, stays, cfg.tau)?;
    let stats = IngestStats {
        records: records.len() as u64,
        out_of_bounds,
        users_seen: 1,
        users_with_stays: u64::from(!trajectory.stays.is_empty()),
        users_retained: 0,
        stays: trajectory.stays.len() as u64,
    };
    Ok((trajectory, stats))
}

/// Stays and trajectory for a single user's records (any order).
pub fn ingest_user(
    mut records: Vec<LocationRecord>,
    cfg: &IngestConfig,
) -> Result<(Trajectory, IngestStats)> {
    sort_records(&mut records);
    process_sorted_user(&records, cfg)
}

/// Total order on records so that any permutation of the input sorts
/// identically.
pub fn sort_records(records: &mut [LocationRecord]) {
    records.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.timestamp.cmp(&b.timestamp))
            .then(a.lat.total_cmp(&b.lat))
            .then(a.lon.total_cmp(&b.lon))
    });
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    /// Retained users only, ordered by user id.
    pub trajectories: Vec<Trajectory>,
    pub stats: IngestStats,
}

/// Full ingest: per-user stay extraction in parallel, then the active-user
/// filter.
pub fn ingest(mut records: Vec<LocationRecord>, cfg: &IngestConfig) -> Result<IngestOutput> {
    cfg.validate()?;
    sort_records(&mut records);
    let mut bounds = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].user_id != records[start].user_id {
            bounds.push(start..i);
            start = i;
        }
    }
    let per_user: Vec<(Trajectory, IngestStats)> = bounds
        .into_par_iter()
        .map(|range| process_sorted_user(&records[range], cfg))
        .collect::<Result<_>>()?;

    let mut stats = IngestStats::default();
    let mut trajectories = Vec::new();
    for (trajectory, user_stats) in per_user {
        stats = stats.merge(&user_stats);
        if has_consecutive_run(&active_days(&trajectory, cfg.zone), cfg.min_consecutive_days) {
            stats.users_retained += 1;
            trajectories.push(trajectory);
        }
    }
    Ok(IngestOutput {
        trajectories,
        stats,
    })
}

/// Reads `user_id,timestamp,lat,lon` CSV. Returns the parsed records and the
/// number of rows skipped as unparseable.
pub fn read_records_csv<R: Read>(reader: R) -> Result<(Vec<LocationRecord>, u64)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid_input(format!("records CSV lacks column {name:?}")))
    };
    let (c_user, c_ts, c_lat, c_lon) =
        (column("user_id")?, column("timestamp")?, column("lat")?, column("lon")?);

    let mut records = Vec::new();
    let mut skipped = 0u64;
    for row in rdr.records() {
        let Ok(row) = row else {
            skipped += 1;
            continue;
        };
        let parsed = (|| {
            let user = row.get(c_user).filter(|u| !u.is_empty())?;
            let ts = parse_timestamp(row.get(c_ts)?).ok()?;
            let lat: f64 = row.get(c_lat)?.parse().ok()?;
            let lon: f64 = row.get(c_lon)?.parse().ok()?;
            let record = LocationRecord::new(user, ts, lat, lon);
            record.is_valid().then_some(record)
        })();
        match parsed {
            Some(r) => records.push(r),
            None => skipped += 1,
        }
    }
    Ok((records, skipped))
}

pub fn write_records_csv<W: Write>(writer: W, records: &[LocationRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["user_id", "timestamp", "lat", "lon"])?;
    for r in records {
        wtr.write_record([
            r.user_id.as_str(),
            &format_utc(r.timestamp),
            &format!("{:.7}", r.lat),
            &format!("{:.7}", r.lon),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Intermediate dump: `user_id,cell_row,cell_col,arrival,departure`.
/// Stay table with instants in the local zone.
pub fn write_stays_csv<W: Write>(
    writer: W,
    trajectories: &[Trajectory],
    zone: LocalZone,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["user_id", "cell_row", "cell_col", "arrival", "departure"])?;
    for stay in trajectories.iter().flat_map(|t| &t.stays) {
        wtr.write_record([
            stay.user_id.as_str(),
            &stay.cell.row.to_string(),
            &stay.cell.col.to_string(),
            &zone.format(stay.arrival),
            &zone.format(stay.departure),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
