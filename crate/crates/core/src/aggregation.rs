//! Per-area aggregation of charge events with population scaling.
//!
//! Raw sums over the observed users are multiplied by `delta / s`, where
//! `delta` is the EV penetration rate and `s = n_usr / n_pop` the share of
//! the population present in the mobility data.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map};

use crate::engine::{Regime, SocTrace};
use crate::error::{invalid_config, invalid_input, Result};
use crate::geo::{area_feature, feature_collection, AreaIndex, PlanningArea, UNASSIGNED_AREA};
use crate::time::{format_time_of_day, DayIndex, LocalZone, SECONDS_PER_DAY};

/// Traces per reduction chunk. Fixed so that floating-point summation order
/// does not depend on the number of worker threads.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingConfig {
    /// EV penetration rate.
    pub delta: f64,
    /// Users retained from the mobility data.
    pub n_usr: u64,
    /// City population.
    pub n_pop: f64,
    /// Width of one demand-profile step, seconds.
    pub time_step: u32,
}

impl ScalingConfig {
    pub fn new(delta: f64, n_usr: u64, n_pop: f64, time_step: u32) -> Result<Self> {
        let cfg = Self {
            delta,
            n_usr,
            n_pop,
            time_step,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Market share `s = n_usr / n_pop`.
    pub fn share(&self) -> f64 {
        self.n_usr as f64 / self.n_pop
    }

    /// Population scaling factor `delta / s`.
    pub fn factor(&self) -> f64 {
        self.delta / self.share()
    }

    pub fn steps_per_day(&self) -> usize {
        (SECONDS_PER_DAY as u32 / self.time_step) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid_config(format!("delta must be in (0, 1], got {}", self.delta)));
        }
        let s = self.share();
        if !(s > 0.0 && s <= 1.0) {
            return Err(invalid_config(format!(
                "market share n_usr/n_pop must be in (0, 1], got {s}"
            )));
        }
        if self.time_step == 0 || SECONDS_PER_DAY as u32 % self.time_step != 0 {
            return Err(invalid_config(format!(
                "time step {}s does not divide 24 h",
                self.time_step
            )));
        }
        Ok(())
    }
}

/// Unscaled per-area, per-day sums.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDayTotals {
    pub discharge_kwh: f64,
    pub pv_charge_kwh: f64,
    pub nonpv_charge_kwh: f64,
    /// Time-averaged charging power per step, kW.
    pub profile_kw: Vec<f64>,
}

impl AreaDayTotals {
    fn new(steps: usize) -> Self {
        Self {
            discharge_kwh: 0.0,
            pv_charge_kwh: 0.0,
            nonpv_charge_kwh: 0.0,
            profile_kw: vec![0.0; steps],
        }
    }

    fn add(&mut self, other: &Self) {
        self.discharge_kwh += other.discharge_kwh;
        self.pv_charge_kwh += other.pv_charge_kwh;
        self.nonpv_charge_kwh += other.nonpv_charge_kwh;
        for (a, b) in self.profile_kw.iter_mut().zip(&other.profile_kw) {
            *a += b;
        }
    }
}

/// Area slot: index into [`AreaIndex::area_ids`], or `area_ids().len()` for
/// the unassigned bucket.
pub type AreaSlot = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Totals {
    pub area_ids: Vec<String>,
    pub time_step: u32,
    pub by_area_day: BTreeMap<(AreaSlot, DayIndex), AreaDayTotals>,
    pub days: Vec<DayIndex>,
}

impl Totals {
    pub fn area_id(&self, slot: AreaSlot) -> &str {
        self.area_ids
            .get(slot)
            .map(String::as_str)
            .unwrap_or(UNASSIGNED_AREA)
    }
}

/// Adds `power` over `[start, end)` to a step profile as time-averaged power.
pub fn spread_power(profile: &mut [f64], step: f64, start: f64, end: f64, power: f64) {
    let first = (start / step).floor() as usize;
    let last = ((end / step).ceil() as usize).min(profile.len());
    for (k, slot) in profile.iter_mut().enumerate().take(last).skip(first) {
        let lo = start.max(k as f64 * step);
        let hi = end.min((k + 1) as f64 * step);
        if hi > lo {
            *slot += if hi - lo == step { power } else { power * (hi - lo) / step };
        }
    }
}

fn accumulate_chunk(
    traces: &[SocTrace],
    index: &AreaIndex,
    step: u32,
) -> BTreeMap<(AreaSlot, DayIndex), AreaDayTotals> {
    let steps = (SECONDS_PER_DAY as u32 / step) as usize;
    let unassigned = index.area_ids().len();
    let mut out: BTreeMap<(AreaSlot, DayIndex), AreaDayTotals> = BTreeMap::new();
    for trace in traces {
        for e in &trace.events {
            let slot = index.area_slot(e.cell).unwrap_or(unassigned);
            let acc = out
                .entry((slot, trace.day))
                .or_insert_with(|| AreaDayTotals::new(steps));
            match e.regime {
                Regime::Discharge => acc.discharge_kwh += e.energy_kwh,
                Regime::PvCharge => acc.pv_charge_kwh += e.energy_kwh,
                Regime::NonPvCharge => acc.nonpv_charge_kwh += e.energy_kwh,
            }
            if e.regime.is_charging() {
                spread_power(&mut acc.profile_kw, step as f64, e.start, e.end, e.power_kw);
            }
        }
    }
    out
}

/// Unscaled per-area sums over all traces. Parallel, with a reduction
/// order fixed by trace order.
pub fn accumulate(traces: &[SocTrace], index: &AreaIndex, time_step: u32) -> Result<Totals> {
    if time_step == 0 || SECONDS_PER_DAY as u32 % time_step != 0 {
        return Err(invalid_config(format!("time step {time_step}s does not divide 24 h")));
    }
    let partials: Vec<_> = traces
        .par_chunks(CHUNK)
        .map(|chunk| accumulate_chunk(chunk, index, time_step))
        .collect();
    let mut by_area_day: BTreeMap<(AreaSlot, DayIndex), AreaDayTotals> = BTreeMap::new();
    for partial in partials {
        for (key, totals) in partial {
            match by_area_day.get_mut(&key) {
                Some(acc) => acc.add(&totals),
                None => {
                    by_area_day.insert(key, totals);
                }
            }
        }
    }
    let mut days: Vec<DayIndex> = traces.iter().map(|t| t.day).collect();
    days.sort_unstable();
    days.dedup();
    Ok(Totals {
        area_ids: index.area_ids().to_vec(),
        time_step,
        by_area_day,
        days,
    })
}

/// Scaled V2G energy supplied per (area, day): the discharge energy of all
/// users in the area times `delta / s`.
pub fn area_energy_supply(
    traces: &[SocTrace],
    index: &AreaIndex,
    scaling: &ScalingConfig,
) -> Result<BTreeMap<(String, DayIndex), f64>> {
    scaling.validate()?;
    let totals = accumulate(traces, index, scaling.time_step)?;
    let f = scaling.factor();
    Ok(totals
        .by_area_day
        .iter()
        .map(|(&(slot, day), t)| ((totals.area_id(slot).to_owned(), day), t.discharge_kwh * f))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakDemand {
    /// Scaled charging power per step, kW.
    pub profile_kw: Vec<f64>,
    pub peak_kw: f64,
    /// First step attaining the peak.
    pub peak_step: usize,
}

impl PeakDemand {
    pub fn from_profile(profile_kw: Vec<f64>) -> Self {
        let mut peak_kw = 0.0;
        let mut peak_step = 0;
        for (k, &p) in profile_kw.iter().enumerate() {
            if p > peak_kw {
                peak_kw = p;
                peak_step = k;
            }
        }
        Self {
            profile_kw,
            peak_kw,
            peak_step,
        }
    }
}

/// Scaled charging-demand profile and its peak per (area, day). Both PV and
/// non-PV charging count as demand.
pub fn area_peak_demand(
    traces: &[SocTrace],
    index: &AreaIndex,
    scaling: &ScalingConfig,
) -> Result<BTreeMap<(String, DayIndex), PeakDemand>> {
    scaling.validate()?;
    let totals = accumulate(traces, index, scaling.time_step)?;
    let f = scaling.factor();
    Ok(totals
        .by_area_day
        .iter()
        .map(|(&(slot, day), t)| {
            let profile = t.profile_kw.iter().map(|p| p * f).collect();
            ((totals.area_id(slot).to_owned(), day), PeakDemand::from_profile(profile))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sizing {
    pub density_w_per_m2: f64,
    pub charging_points_abs: u64,
    pub charging_points_per_km2: f64,
}

/// Peak demand density and the number of chargers of power `p_charge_kw`
/// needed to serve the peak.
pub fn peak_density_and_sizing(peak_kw: f64, area_m2: f64, p_charge_kw: f64) -> Result<Sizing> {
    if !(area_m2.is_finite() && area_m2 > 0.0) {
        return Err(invalid_input(format!("area must be > 0 m², got {area_m2}")));
    }
    if !(p_charge_kw > 0.0) {
        return Err(invalid_input("charging power must be positive"));
    }
    Ok(Sizing {
        density_w_per_m2: peak_kw * 1000.0 / area_m2,
        charging_points_abs: (peak_kw / p_charge_kw).ceil() as u64,
        charging_points_per_km2: peak_kw / (area_m2 * p_charge_kw) * 1e6,
    })
}

/// Local PV generation density `eta * a_pv * irradiance`, W/m².
pub fn pv_potential(eta_pv: f64, a_pv: f64, irradiance_w_m2: f64) -> f64 {
    eta_pv * a_pv * irradiance_w_m2
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvBalance {
    pub area_id: String,
    pub day: DayIndex,
    pub peak_density_w_per_m2: f64,
    /// `p_pv - p_k`; negative means a deficit.
    pub surplus_w_per_m2: f64,
    pub deficit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvAssessment {
    pub p_pv_w_per_m2: f64,
    pub areas: Vec<PvBalance>,
}

/// Compares each area's peak demand density with the local PV potential.
pub fn pv_sufficiency(
    aggregates: &[AreaAggregate],
    eta_pv: f64,
    a_pv: f64,
    irradiance_w_m2: f64,
) -> PvAssessment {
    let p_pv = pv_potential(eta_pv, a_pv, irradiance_w_m2);
    let areas = aggregates
        .iter()
        .filter_map(|a| {
            let p_k = a.sizing?.density_w_per_m2;
            Some(PvBalance {
                area_id: a.area_id.clone(),
                day: a.day,
                peak_density_w_per_m2: p_k,
                surplus_w_per_m2: p_pv - p_k,
                deficit: p_k > p_pv,
            })
        })
        .collect();
    PvAssessment {
        p_pv_w_per_m2: p_pv,
        areas,
    }
}

/// Scaled per-area, per-day metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaAggregate {
    pub area_id: String,
    pub day: DayIndex,
    pub e_ev_kwh: f64,
    pub e_pv_charge_kwh: f64,
    pub e_nonpv_charge_kwh: f64,
    pub demand: PeakDemand,
    /// `None` for the unassigned bucket, which has no footprint.
    pub sizing: Option<Sizing>,
}

/// Full per-area table: every known area for every simulated day (zeros
/// where nothing happened), plus the unassigned bucket on days it is used.
pub fn aggregate(
    traces: &[SocTrace],
    index: &AreaIndex,
    areas: &[PlanningArea],
    scaling: &ScalingConfig,
    p_charge_kw: f64,
) -> Result<Vec<AreaAggregate>> {
    scaling.validate()?;
    let totals = accumulate(traces, index, scaling.time_step)?;
    aggregate_totals(&totals, areas, scaling, p_charge_kw)
}

pub fn aggregate_totals(
    totals: &Totals,
    areas: &[PlanningArea],
    scaling: &ScalingConfig,
    p_charge_kw: f64,
) -> Result<Vec<AreaAggregate>> {
    let f = scaling.factor();
    let steps = scaling.steps_per_day();
    let footprint: BTreeMap<&str, f64> =
        areas.iter().map(|a| (a.area_id.as_str(), a.area_m2)).collect();
    let empty = AreaDayTotals::new(steps);
    let mut out = Vec::new();
    for slot in 0..=totals.area_ids.len() {
        let area_id = totals.area_id(slot);
        for &day in &totals.days {
            let entry = totals.by_area_day.get(&(slot, day));
            if entry.is_none() && slot == totals.area_ids.len() {
                continue;
            }
            let t = entry.unwrap_or(&empty);
            let demand = PeakDemand::from_profile(t.profile_kw.iter().map(|p| p * f).collect());
            let sizing = match footprint.get(area_id) {
                Some(&a) => Some(peak_density_and_sizing(demand.peak_kw, a, p_charge_kw)?),
                None => None,
            };
            out.push(AreaAggregate {
                area_id: area_id.to_owned(),
                day,
                e_ev_kwh: t.discharge_kwh * f,
                e_pv_charge_kwh: t.pv_charge_kwh * f,
                e_nonpv_charge_kwh: t.nonpv_charge_kwh * f,
                demand,
                sizing,
            });
        }
    }
    Ok(out)
}

/// `area_energy.csv`
pub fn write_energy_csv<W: Write>(w: W, rows: &[AreaAggregate], zone: LocalZone) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["area_id", "day", "e_ev_kwh", "e_pv_charge_kwh", "e_nonpv_charge_kwh"])?;
    for r in rows {
        wtr.write_record([
            r.area_id.clone(),
            zone.date(r.day).to_string(),
            r.e_ev_kwh.to_string(),
            r.e_pv_charge_kwh.to_string(),
            r.e_nonpv_charge_kwh.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `area_peak.csv`; sizing columns are empty for the unassigned bucket.
pub fn write_peak_csv<W: Write>(w: W, rows: &[AreaAggregate], zone: LocalZone) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "area_id",
        "day",
        "p_peak_kw",
        "p_density_w_m2",
        "charging_points_abs",
        "charging_points_per_km2",
    ])?;
    for r in rows {
        let (density, abs, per_km2) = match r.sizing {
            Some(s) => (
                s.density_w_per_m2.to_string(),
                s.charging_points_abs.to_string(),
                s.charging_points_per_km2.to_string(),
            ),
            None => Default::default(),
        };
        wtr.write_record([
            r.area_id.clone(),
            zone.date(r.day).to_string(),
            r.demand.peak_kw.to_string(),
            density,
            abs,
            per_km2,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `area_profile.csv`
pub fn write_profile_csv<W: Write>(
    w: W,
    rows: &[AreaAggregate],
    zone: LocalZone,
    time_step: u32,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["area_id", "day", "step_start", "power_kw"])?;
    for r in rows {
        let date = zone.date(r.day).to_string();
        for (k, p) in r.demand.profile_kw.iter().enumerate() {
            wtr.write_record([
                r.area_id.as_str(),
                &date,
                &format_time_of_day(k as u32 * time_step),
                &p.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Planning-area GeoJSON with daily means of the area metrics attached.
pub fn metrics_geojson(
    areas: &[PlanningArea],
    rows: &[AreaAggregate],
    p_pv_w_per_m2: f64,
) -> serde_json::Value {
    let mut sums: BTreeMap<&str, (f64, f64, f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = sums.entry(r.area_id.as_str()).or_default();
        e.0 += r.e_ev_kwh;
        e.1 = e.1.max(r.demand.peak_kw);
        e.2 = e.2.max(r.sizing.map_or(0.0, |s| s.density_w_per_m2));
        e.3 = e.3.max(r.sizing.map_or(0.0, |s| s.charging_points_per_km2));
        e.4 += 1;
    }
    let features = areas
        .iter()
        .map(|area| {
            let (e, peak, density, points, n) =
                sums.get(area.area_id.as_str()).copied().unwrap_or_default();
            let mut props = Map::new();
            props.insert("e_ev_kwh_mean".into(), json!(if n > 0 { e / n as f64 } else { 0.0 }));
            props.insert("p_peak_kw_max".into(), json!(peak));
            props.insert("p_density_w_m2_max".into(), json!(density));
            props.insert("charging_points_per_km2_max".into(), json!(points));
            props.insert("pv_deficit".into(), json!(density > p_pv_w_per_m2));
            area_feature(area, props)
        })
        .collect();
    feature_collection(features)
}
