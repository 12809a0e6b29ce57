//! The end-to-end scenario run behind `v2g run`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use v2g_core::aggregation::{
    aggregate, metrics_geojson, pv_sufficiency, write_energy_csv, write_peak_csv,
    write_profile_csv, AreaAggregate, ScalingConfig,
};
use v2g_core::engine::{run_scenario, verify_trace, PvWindow, SocTrace, VehicleParams};
use v2g_core::geo::{AreaIndex, GridSpec, PlanningArea, UNASSIGNED_AREA};
use v2g_core::household::{
    coverage_and_stats, household_night_energy, night_fraction, read_demand_csv,
    write_coverage_csv, write_histogram_csv, write_regression_txt,
};
use v2g_core::ingest::{ingest, read_records_csv, write_stays_csv, IngestConfig, Trajectory};
use v2g_core::time::{format_time_of_day, parse_time_of_day, DayIndex, LocalZone};

use crate::{ConfigError, InvariantViolation, RunArgs};

pub const ENERGY_CSV: &str = "area_energy.csv";
pub const PEAK_CSV: &str = "area_peak.csv";
pub const PROFILE_CSV: &str = "area_profile.csv";
pub const COVERAGE_CSV: &str = "coverage.csv";
pub const HISTOGRAM_CSV: &str = "coverage_hist.csv";
pub const REGRESSION_TXT: &str = "regression.txt";
pub const METRICS_GEOJSON: &str = "area_metrics.geojson";
pub const STAYS_CSV: &str = "stays.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Parameter values actually handed to the library.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub vehicle: VehicleParams,
    pub pv_window: PvWindowConfig,
    pub ingest: IngestSettings,
    pub scaling: ScalingSettings,
    pub household: HouseholdSettings,
    pub pv_supply: PvSupplySettings,
    pub time_zone: String,
    pub days: Option<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PvWindowConfig {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSettings {
    pub tau_s: i64,
    pub min_consecutive_days: u32,
    pub cell_size_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSettings {
    pub delta: f64,
    pub n_pop: f64,
    pub n_usr: u64,
    pub share: f64,
    pub factor: f64,
    pub time_step_s: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct HouseholdSettings {
    pub days_in_month: u32,
    pub night_fraction: f64,
    pub coverage_bin_width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PvSupplySettings {
    pub eta_pv: f64,
    pub a_pv: f64,
    pub irradiance_w_m2: f64,
    pub p_pv_w_m2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunCounts {
    pub records_read: u64,
    pub rows_skipped: u64,
    pub records_out_of_grid: u64,
    pub users_seen: u64,
    pub users_with_stays: u64,
    pub users_retained: u64,
    pub stays: u64,
    pub days_simulated: u64,
    pub user_days: u64,
    pub charge_events: u64,
    pub range_exceeded: u64,
    pub areas: u64,
    pub unassigned_cells: u64,
    pub coverage_excluded: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub n_rows: u32,
    pub n_cols: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub config: EffectiveConfig,
    pub grid: GridSummary,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub counts: RunCounts,
    pub warnings: Vec<String>,
}

/// Result of a successful run.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub aggregates: Vec<AreaAggregate>,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

fn open_input(path: &Path, what: &str) -> Result<File> {
    File::open(path)
        .map_err(|e| config_err(format!("cannot open {what} {}: {e}", path.display())))
}

fn bounding_box(areas: &[PlanningArea]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in areas.iter().flat_map(|a| a.rings.iter().flatten()) {
        b.0 = b.0.min(p[1]);
        b.1 = b.1.min(p[0]);
        b.2 = b.2.max(p[1]);
        b.3 = b.3.max(p[0]);
    }
    b
}

fn day_range(trajectories: &[Trajectory], zone: LocalZone) -> Option<(DayIndex, DayIndex)> {
    let stays = trajectories.iter().flat_map(|t| &t.stays);
    let first = stays.clone().map(|s| zone.day_of(s.arrival)).min()?;
    let last = stays.map(|s| zone.day_of(s.departure - 1)).max()?;
    Some((first, last))
}

fn parse_date(s: &str, zone: LocalZone) -> Result<DayIndex> {
    let date = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| config_err(format!("bad date {s:?}: {e}")))?;
    Ok(zone.day_of_date(date))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush()?;
    Ok(path)
}

fn write_events_csv<W: Write>(w: W, traces: &[SocTrace], zone: LocalZone) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "user_id", "day", "cell_row", "cell_col", "regime", "start", "end", "power_kw",
        "energy_kwh",
    ])?;
    for t in traces {
        let date = zone.date(t.day).to_string();
        for e in &t.events {
            wtr.write_record([
                t.user_id.clone(),
                date.clone(),
                e.cell.row.to_string(),
                e.cell.col.to_string(),
                e.regime.as_str().to_string(),
                zone.format_day_offset(t.day, e.start),
                zone.format_day_offset(t.day, e.end),
                e.power_kw.to_string(),
                e.energy_kwh.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Runs the whole pipeline and writes every output table plus the manifest
/// into `args.out_dir`.
pub fn execute(args: &RunArgs) -> Result<RunOutcome> {
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let mut warnings = Vec::new();
    let mut counts = RunCounts::default();

    let zone: LocalZone = args.tz.parse().map_err(|e| config_err(format!("--tz: {e}")))?;
    let vehicle = VehicleParams {
        c_max_kwh: args.c_max,
        l_max_km: args.l_max,
        p_charge_kw: args.p_charge,
        p_discharge_kw: args.p_discharge,
        c_thr: args.c_thr,
        c_init: args.c_init,
        pv_charge_target: args.pv_charge_target,
    };
    vehicle.validate().map_err(|e| config_err(e.to_string()))?;
    let pv_start = parse_time_of_day(&args.pv_start).map_err(|e| config_err(e.to_string()))?;
    let pv_end = parse_time_of_day(&args.pv_end).map_err(|e| config_err(e.to_string()))?;
    let window = PvWindow::new(pv_start, pv_end).map_err(|e| config_err(e.to_string()))?;
    let time_step = args
        .time_step
        .checked_mul(60)
        .ok_or_else(|| config_err("--time-step too large"))?;
    if !(args.n_pop >= 1.0) {
        return Err(config_err("--n-pop must be at least 1"));
    }
    // Validates delta and the step before any input is touched.
    ScalingConfig::new(args.delta, 1, args.n_pop, time_step)
        .map_err(|e| config_err(e.to_string()))?;
    if args.days_in_month == 0 || args.days_in_month > 31 {
        return Err(config_err("--days-in-month must be in 1..=31"));
    }
    if !(args.bin_width > 0.0) {
        return Err(config_err("--bin-width must be positive"));
    }
    if args.min_days == 0 {
        return Err(config_err("--min-days must be at least 1"));
    }
    let forced_days = match (&args.start_date, &args.end_date) {
        (Some(a), Some(b)) => {
            let (a, b) = (parse_date(a, zone)?, parse_date(b, zone)?);
            if b < a {
                return Err(config_err("--end-date precedes --start-date"));
            }
            Some((a, b))
        }
        (None, None) => None,
        _ => return Err(config_err("--start-date and --end-date go together")),
    };

    // Inputs.
    let areas_text = fs::read_to_string(&args.areas)
        .map_err(|e| config_err(format!("cannot read areas {}: {e}", args.areas.display())))?;
    let areas = v2g_core::geo::parse_planning_areas(&areas_text)
        .map_err(|e| config_err(format!("{}: {e}", args.areas.display())))?;
    if areas.is_empty() {
        return Err(config_err("areas file has no features"));
    }
    let (min_lat, min_lon, max_lat, max_lon) = bounding_box(&areas);
    let grid = GridSpec::covering(min_lat, min_lon, max_lat, max_lon, args.cell_size)
        .map_err(|e| config_err(e.to_string()))?;
    let index = AreaIndex::build(&grid, &areas).map_err(|e| config_err(e.to_string()))?;
    counts.areas = areas.len() as u64;
    counts.unassigned_cells = index.unassigned_cells() as u64;
    if counts.unassigned_cells > 0 {
        warnings.push(format!(
            "{} grid cells lie outside every planning area; their activity is reported as {UNASSIGNED_AREA}",
            counts.unassigned_cells
        ));
    }

    let curve = read_demand_csv(open_input(&args.demand, "demand curve")?)
        .map_err(|e| config_err(format!("{}: {e}", args.demand.display())))?;
    let night = night_fraction(&curve, &window).map_err(|e| config_err(e.to_string()))?;

    let (records, skipped) = read_records_csv(open_input(&args.records, "records")?)
        .map_err(|e| config_err(format!("{}: {e}", args.records.display())))?;
    counts.rows_skipped = skipped;
    if skipped > 0 {
        warnings.push(format!("{skipped} malformed record rows skipped"));
    }

    // Ingest.
    let mut icfg = IngestConfig::new(grid.clone());
    icfg.tau = args.tau * 60;
    icfg.min_consecutive_days = args.min_days;
    icfg.zone = zone;
    icfg.validate().map_err(|e| config_err(e.to_string()))?;
    let ingested = ingest(records, &icfg)?;
    let stats = &ingested.stats;
    counts.records_read = stats.records;
    counts.records_out_of_grid = stats.out_of_bounds;
    counts.users_seen = stats.users_seen;
    counts.users_with_stays = stats.users_with_stays;
    counts.users_retained = stats.users_retained;
    counts.stays = stats.stays;
    if stats.out_of_bounds > 0 {
        warnings.push(format!("{} records outside the grid ignored", stats.out_of_bounds));
    }
    let trajectories = ingested.trajectories;

    // Simulate and check.
    let days = forced_days.or_else(|| day_range(&trajectories, zone));
    let traces = match days {
        Some((a, b)) => run_scenario(&trajectories, &vehicle, &window, &grid, zone, a..=b)?,
        None => Vec::new(),
    };
    if let Some(bad) = traces
        .par_iter()
        .map(|t| verify_trace(t, &vehicle, &window).err().map(|e| (t, e)))
        .find_first(Option::is_some)
        .flatten()
    {
        let (t, why) = bad;
        return Err(InvariantViolation(format!(
            "user {} on {}: {why}",
            t.user_id,
            zone.date(t.day)
        ))
        .into());
    }
    counts.days_simulated = days.map_or(0, |(a, b)| (b - a + 1) as u64);
    counts.user_days = traces.len() as u64;
    counts.charge_events = traces.iter().map(|t| t.events.len() as u64).sum();
    counts.range_exceeded = traces.iter().map(|t| t.range_exceeded as u64).sum();
    if counts.range_exceeded > 0 {
        warnings.push(format!(
            "{} trips exceeded the remaining range; SOC clamped at 0",
            counts.range_exceeded
        ));
    }

    // Aggregate.
    let n_usr = trajectories.len() as u64;
    if n_usr == 0 {
        warnings.push("no users retained; all aggregates are zero".into());
    }
    let scaling = ScalingConfig::new(args.delta, n_usr.max(1), args.n_pop, time_step)
        .map_err(|e| config_err(e.to_string()))?;
    let aggregates = aggregate(&traces, &index, &areas, &scaling, vehicle.p_charge_kw)?;
    let unassigned_kwh: f64 = aggregates
        .iter()
        .filter(|r| r.area_id == UNASSIGNED_AREA)
        .map(|r| r.e_ev_kwh + r.e_pv_charge_kwh + r.e_nonpv_charge_kwh)
        .sum();
    if unassigned_kwh > 0.0 {
        warnings.push(format!(
            "{unassigned_kwh} kWh of scaled (dis)charging happened outside every planning area"
        ));
    }
    let pv = pv_sufficiency(&aggregates, args.eta_pv, args.a_pv, args.irradiance);

    // Household coverage on daily means.
    let n_days = counts.days_simulated.max(1) as f64;
    let mut e_ev_total: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &aggregates {
        *e_ev_total.entry(r.area_id.as_str()).or_default() += r.e_ev_kwh;
    }
    let mut pairs = Vec::new();
    for area in &areas {
        match household_night_energy(area, args.days_in_month, night) {
            Some(e_hh) => {
                let e_ev = e_ev_total.get(area.area_id.as_str()).copied().unwrap_or(0.0) / n_days;
                pairs.push((area.area_id.clone(), e_ev, e_hh));
            }
            None => warnings.push(format!("area {} has no household data", area.area_id)),
        }
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let coverage = coverage_and_stats(&pairs, args.bin_width)?;
    counts.coverage_excluded = coverage.excluded.len() as u64;
    if !coverage.excluded.is_empty() {
        warnings.push(format!(
            "areas with zero household energy left out of coverage: {}",
            coverage.excluded.join(" ")
        ));
    }
    if let Err(reason) = &coverage.regression {
        warnings.push(format!("regression withheld: {reason}"));
    }

    // Outputs.
    let out = &args.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = vec![
        write_file(out, ENERGY_CSV, |w| Ok(write_energy_csv(w, &aggregates, zone)?))?,
        write_file(out, PEAK_CSV, |w| Ok(write_peak_csv(w, &aggregates, zone)?))?,
        write_file(out, PROFILE_CSV, |w| {
            Ok(write_profile_csv(w, &aggregates, zone, time_step)?)
        })?,
        write_file(out, COVERAGE_CSV, |w| Ok(write_coverage_csv(w, &coverage.rows)?))?,
        write_file(out, HISTOGRAM_CSV, |w| Ok(write_histogram_csv(w, &coverage.histogram)?))?,
        write_file(out, REGRESSION_TXT, |w| {
            Ok(write_regression_txt(w, &coverage.regression, coverage.rows.len())?)
        })?,
        write_file(out, METRICS_GEOJSON, |w| {
            let doc = metrics_geojson(&areas, &aggregates, pv.p_pv_w_per_m2);
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            w.write_all(b"\n")?;
            Ok(())
        })?,
    ];
    if args.emit_events {
        written.push(write_file(out, STAYS_CSV, |w| Ok(write_stays_csv(w, &trajectories, zone)?))?);
        written.push(write_file(out, EVENTS_CSV, |w| write_events_csv(w, &traces, zone))?);
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("records".to_string(), digest_file(&args.records)?);
    inputs.insert("areas".to_string(), digest_file(&args.areas)?);
    inputs.insert("demand".to_string(), digest_file(&args.demand)?);
    let mut outputs = BTreeMap::new();
    for path in &written {
        let name = path.file_name().expect("file name").to_string_lossy().into_owned();
        outputs.insert(name, digest_file(path)?);
    }

    let config = EffectiveConfig {
        vehicle,
        pv_window: PvWindowConfig {
            start: format_time_of_day(window.start),
            end: format_time_of_day(window.end),
        },
        ingest: IngestSettings {
            tau_s: icfg.tau,
            min_consecutive_days: icfg.min_consecutive_days,
            cell_size_m: grid.cell_size_m,
        },
        scaling: ScalingSettings {
            delta: scaling.delta,
            n_pop: scaling.n_pop,
            n_usr,
            share: scaling.share(),
            factor: scaling.factor(),
            time_step_s: scaling.time_step,
        },
        household: HouseholdSettings {
            days_in_month: args.days_in_month,
            night_fraction: night,
            coverage_bin_width: args.bin_width,
        },
        pv_supply: PvSupplySettings {
            eta_pv: args.eta_pv,
            a_pv: args.a_pv,
            irradiance_w_m2: args.irradiance,
            p_pv_w_m2: pv.p_pv_w_per_m2,
        },
        time_zone: zone.to_string(),
        days: days.map(|(a, b)| (zone.date(a).to_string(), zone.date(b).to_string())),
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config,
        grid: GridSummary {
            origin_lat: grid.origin_lat,
            origin_lon: grid.origin_lon,
            cell_size_m: grid.cell_size_m,
            n_rows: grid.n_rows,
            n_cols: grid.n_cols,
        },
        inputs,
        outputs,
        counts,
        warnings,
    };
    write_file(out, MANIFEST_JSON, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(RunOutcome {
        manifest,
        aggregates,
    })
}
