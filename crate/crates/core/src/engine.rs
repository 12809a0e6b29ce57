//! Per-vehicle, per-day battery state machine.
//!
//! While parked at a stay the vehicle is in one of three regimes:
//!
//! * inside the PV window it charges at `p_charge` until `pv_charge_target`;
//! * outside the window with SOC above `c_thr` it discharges at
//!   `p_discharge` down to `c_thr`;
//! * outside the window with SOC below `c_thr` it charges from non-PV
//!   sources up to `c_thr`.
//!
//! Driving between stays removes `distance / l_max` of SOC at the arrival
//! instant. Every day starts from `c_init` at local midnight.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid_config, invalid_input, Result};
use crate::geo::{CellId, GridSpec};
use crate::ingest::Trajectory;
use crate::time::{DayIndex, LocalZone, SECONDS_PER_DAY, SECONDS_PER_HOUR};

const DAY_SECONDS: f64 = SECONDS_PER_DAY as f64;
const SOC_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleParams {
    /// Usable battery capacity, kWh.
    pub c_max_kwh: f64,
    /// Range on a full battery, km.
    pub l_max_km: f64,
    pub p_charge_kw: f64,
    pub p_discharge_kw: f64,
    /// SOC threshold separating charging from discharging outside the PV window.
    pub c_thr: f64,
    /// SOC at local midnight.
    pub c_init: f64,
    /// SOC at which PV-window charging stops.
    pub pv_charge_target: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            c_max_kwh: 25.0,
            l_max_km: 135.0,
            p_charge_kw: 6.6,
            p_discharge_kw: 6.6,
            c_thr: 0.5,
            c_init: 0.5,
            pv_charge_target: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_max", self.c_max_kwh),
            ("l_max", self.l_max_km),
            ("p_charge", self.p_charge_kw),
            ("p_discharge", self.p_discharge_kw),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid_config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("c_thr", self.c_thr),
            ("c_init", self.c_init),
            ("pv_charge_target", self.pv_charge_target),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid_config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Battery energy used to drive `distance_km`: `c_max / l_max * l`.
pub fn depletion(distance_km: f64, params: &VehicleParams) -> Result<f64> {
    if !(distance_km.is_finite() && distance_km >= 0.0) {
        return Err(invalid_input(format!("distance must be >= 0, got {distance_km}")));
    }
    Ok(params.c_max_kwh / params.l_max_km * distance_km)
}

/// Daily interval `[start, end)` of PV-backed charging, in seconds after
/// local midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PvWindow {
    pub start: u32,
    pub end: u32,
}

impl PvWindow {
    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start >= end || end > SECONDS_PER_DAY as u32 {
            return Err(invalid_config(format!(
                "PV window needs start < end <= 24:00, got {start}s..{end}s"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start as f64 && t < self.end as f64
    }
}

impl Default for PvWindow {
    /// 09:00 to 17:00.
    fn default() -> Self {
        Self {
            start: 9 * 3600,
            end: 17 * 3600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Regime {
    #[serde(rename = "PV_CHARGE")]
    PvCharge,
    #[serde(rename = "NONPV_CHARGE")]
    NonPvCharge,
    #[serde(rename = "DISCHARGE")]
    Discharge,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::PvCharge => "PV_CHARGE",
            Regime::NonPvCharge => "NONPV_CHARGE",
            Regime::Discharge => "DISCHARGE",
        }
    }

    pub fn is_charging(&self) -> bool {
        !matches!(self, Regime::Discharge)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stay clipped to one simulated day, in seconds after local midnight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayStay {
    pub cell: CellId,
    pub start: f64,
    pub end: f64,
}

/// Constant-power energy transfer during one stay. Power is the magnitude
/// in the regime's own direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeEvent {
    pub cell: CellId,
    pub start: f64,
    pub end: f64,
    pub regime: Regime,
    pub power_kw: f64,
    pub energy_kwh: f64,
}

impl ChargeEvent {
    pub fn duration_h(&self) -> f64 {
        (self.end - self.start) / SECONDS_PER_HOUR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepletionJump {
    pub at: f64,
    pub from_cell: CellId,
    pub to_cell: CellId,
    pub distance_km: f64,
    /// SOC actually removed (after clamping at zero).
    pub soc_drop: f64,
    /// Trip needed more than the remaining charge.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocTrace {
    pub user_id: String,
    pub day: DayIndex,
    /// `(seconds after midnight, soc)`; linear in between. Depletion jumps
    /// appear as two breakpoints at the same instant.
    pub breakpoints: Vec<(f64, f64)>,
    pub events: Vec<ChargeEvent>,
    pub jumps: Vec<DepletionJump>,
    pub range_exceeded: u32,
}

impl SocTrace {
    pub fn energy(&self, regime: Regime) -> f64 {
        self.events
            .iter()
            .filter(|e| e.regime == regime)
            .map(|e| e.energy_kwh)
            .sum()
    }

    pub fn initial_soc(&self) -> f64 {
        self.breakpoints[0].1
    }

    pub fn final_soc(&self) -> f64 {
        self.breakpoints.last().expect("trace has breakpoints").1
    }
}

struct DayBuilder<'a> {
    params: &'a VehicleParams,
    soc: f64,
    breakpoints: Vec<(f64, f64)>,
    events: Vec<ChargeEvent>,
}

impl DayBuilder<'_> {
    fn mark(&mut self, t: f64) {
        let point = (t, self.soc);
        if self.breakpoints.last() != Some(&point) {
            self.breakpoints.push(point);
        }
    }

    /// Parks in `cell` over `[a, b)`, which lies entirely inside or entirely
    /// outside the PV window.
    fn park(&mut self, cell: CellId, a: f64, b: f64, in_pv_window: bool) {
        let p = self.params;
        let action = if in_pv_window {
            (self.soc < p.pv_charge_target)
                .then_some((Regime::PvCharge, p.pv_charge_target, p.p_charge_kw))
        } else if self.soc > p.c_thr {
            Some((Regime::Discharge, p.c_thr, p.p_discharge_kw))
        } else if self.soc < p.c_thr {
            Some((Regime::NonPvCharge, p.c_thr, p.p_charge_kw))
        } else {
            None
        };
        if let Some((regime, target, power)) = action {
            let needed = (target - self.soc).abs() * p.c_max_kwh;
            let available = power * (b - a) / SECONDS_PER_HOUR;
            let (end, energy) = if available >= needed {
                self.soc = target;
                ((a + needed / power * SECONDS_PER_HOUR).min(b), needed)
            } else {
                let delta = available / p.c_max_kwh;
                if regime.is_charging() {
                    self.soc += delta;
                } else {
                    self.soc -= delta;
                }
                // Snap rounding residue so the next segment sees the exact target.
                if (self.soc - target).abs() < SOC_SNAP {
                    self.soc = target;
                }
                (b, available)
            };
            self.events.push(ChargeEvent {
                cell,
                start: a,
                end,
                regime,
                power_kw: power,
                energy_kwh: energy,
            });
            self.mark(end);
        }
        self.mark(b);
    }
}

/// Simulates one vehicle over one local day. `stays` must be time-ordered,
/// non-overlapping and within `[0, 86400]` seconds.
pub fn simulate_day(
    user_id: &str,
    day: DayIndex,
    stays: &[DayStay],
    params: &VehicleParams,
    window: &PvWindow,
    grid: &GridSpec,
) -> Result<SocTrace> {
    let mut prev_end = 0.0;
    for s in stays {
        if !(s.start >= 0.0 && s.end <= DAY_SECONDS && s.start < s.end) {
            return Err(invalid_input(format!(
                "stay {}..{} outside the day or empty",
                s.start, s.end
            )));
        }
        if s.start < prev_end {
            return Err(invalid_input("stays overlap or are out of order"));
        }
        if !grid.contains_cell(s.cell) {
            return Err(invalid_input(format!("cell {:?} outside the grid", s.cell)));
        }
        prev_end = s.end;
    }

    let mut b = DayBuilder {
        params,
        soc: params.c_init,
        breakpoints: vec![(0.0, params.c_init)],
        events: Vec::new(),
    };
    let mut jumps = Vec::new();
    let mut range_exceeded = 0;
    let (w0, w1) = (window.start as f64, window.end as f64);

    let mut prev_cell: Option<CellId> = None;
    for stay in stays {
        b.mark(stay.start);
        if let Some(from) = prev_cell {
            let distance_km = grid.cell_distance_m(from, stay.cell) / 1000.0;
            let wanted = depletion(distance_km, params)? / params.c_max_kwh;
            let clamped = wanted > b.soc;
            let soc_drop = wanted.min(b.soc);
            range_exceeded += u32::from(clamped);
            b.soc = if clamped { 0.0 } else { b.soc - soc_drop };
            b.mark(stay.start);
            jumps.push(DepletionJump {
                at: stay.start,
                from_cell: from,
                to_cell: stay.cell,
                distance_km,
                soc_drop,
                clamped,
            });
        }
        let mut cuts = vec![stay.start];
        cuts.extend([w0, w1].into_iter().filter(|&t| t > stay.start && t < stay.end));
        cuts.push(stay.end);
        for seg in cuts.windows(2) {
            b.park(stay.cell, seg[0], seg[1], window.contains(seg[0]));
        }
        prev_cell = Some(stay.cell);
    }
    b.mark(DAY_SECONDS);

    Ok(SocTrace {
        user_id: user_id.to_owned(),
        day,
        breakpoints: b.breakpoints,
        events: b.events,
        jumps,
        range_exceeded,
    })
}

/// Splits a trajectory into per-day stay slices. Stays crossing midnight
/// are cut at 00:00.
pub fn split_by_day(trajectory: &Trajectory, zone: LocalZone) -> BTreeMap<DayIndex, Vec<DayStay>> {
    let mut days: BTreeMap<DayIndex, Vec<DayStay>> = BTreeMap::new();
    for stay in &trajectory.stays {
        let first = zone.day_of(stay.arrival);
        let last = zone.day_of(stay.departure);
        for day in first..=last {
            let day_start = zone.day_start(day);
            let start = (stay.arrival - day_start).max(0);
            let end = (stay.departure - day_start).min(SECONDS_PER_DAY);
            if end > start {
                days.entry(day).or_default().push(DayStay {
                    cell: stay.cell,
                    start: start as f64,
                    end: end as f64,
                });
            }
        }
    }
    days
}

/// One trace per trajectory per day in `days`, ordered by trajectory then
/// day. Days without stays give flat traces.
pub fn run_scenario(
    trajectories: &[Trajectory],
    params: &VehicleParams,
    window: &PvWindow,
    grid: &GridSpec,
    zone: LocalZone,
    days: RangeInclusive<DayIndex>,
) -> Result<Vec<SocTrace>> {
    params.validate()?;
    let per_user: Vec<Vec<SocTrace>> = trajectories
        .par_iter()
        .map(|t| simulate_user(t, params, window, grid, zone, days.clone()))
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

pub fn simulate_user(
    trajectory: &Trajectory,
    params: &VehicleParams,
    window: &PvWindow,
    grid: &GridSpec,
    zone: LocalZone,
    days: RangeInclusive<DayIndex>,
) -> Result<Vec<SocTrace>> {
    let by_day = split_by_day(trajectory, zone);
    days.map(|day| {
        let stays = by_day.get(&day).map(Vec::as_slice).unwrap_or(&[]);
        simulate_day(&trajectory.user_id, day, stays, params, window, grid)
    })
    .collect()
}

/// Residual of the daily energy balance, relative to the largest term
/// (floored at 1).
pub fn conservation_residual(trace: &SocTrace, params: &VehicleParams) -> f64 {
    let charged = trace.energy(Regime::PvCharge) + trace.energy(Regime::NonPvCharge);
    let discharged = trace.energy(Regime::Discharge);
    let driven: f64 = trace.jumps.iter().map(|j| j.soc_drop).sum();
    let lhs = trace.final_soc() - trace.initial_soc();
    let rhs = (charged - discharged) / params.c_max_kwh - driven;
    let scale = [
        lhs.abs(),
        charged / params.c_max_kwh,
        discharged / params.c_max_kwh,
        driven,
        1.0,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    (lhs - rhs).abs() / scale
}

/// Checks a trace against the model invariants; returns a description of
/// the first violation.
pub fn verify_trace(
    trace: &SocTrace,
    params: &VehicleParams,
    window: &PvWindow,
) -> std::result::Result<(), String> {
    const EPS: f64 = 1e-9;
    let fail = |what: String| Err(format!("{} day {}: {what}", trace.user_id, trace.day));

    if let Some(&(t, s)) = trace
        .breakpoints
        .iter()
        .find(|(_, s)| !(-EPS..=1.0 + EPS).contains(s))
    {
        return fail(format!("soc {s} out of [0,1] at {t}"));
    }
    if trace.breakpoints.windows(2).any(|w| w[1].0 < w[0].0) {
        return fail("breakpoints not time ordered".into());
    }
    let slopes = [
        0.0,
        params.p_charge_kw / params.c_max_kwh,
        -params.p_discharge_kw / params.c_max_kwh,
    ];
    for w in trace.breakpoints.windows(2) {
        let ((t0, s0), (t1, s1)) = (w[0], w[1]);
        if t1 > t0 {
            let hours = (t1 - t0) / SECONDS_PER_HOUR;
            if !slopes.iter().any(|m| (s1 - s0 - m * hours).abs() <= EPS) {
                let slope = (s1 - s0) / hours;
                return fail(format!("slope {slope}/h between {t0} and {t1}"));
            }
        } else if s1 > s0 + EPS {
            return fail(format!("upward jump at {t0}"));
        }
    }
    let residual = conservation_residual(trace, params);
    if residual >= 1e-9 {
        return fail(format!("energy balance residual {residual:e}"));
    }
    for e in &trace.events {
        if !(e.start < e.end) {
            return fail(format!("empty event at {}", e.start));
        }
        let inside = window.contains(e.start) && e.end <= window.end as f64;
        let outside =
            e.end <= window.start as f64 || e.start >= window.end as f64;
        match e.regime {
            Regime::PvCharge if !inside => {
                return fail(format!("PV charging outside window {}..{}", e.start, e.end))
            }
            Regime::NonPvCharge | Regime::Discharge if !outside => {
                return fail(format!("{} inside PV window {}..{}", e.regime, e.start, e.end))
            }
            _ => {}
        }
        let soc_end = soc_at_end_of(trace, e);
        let ok = match e.regime {
            Regime::Discharge => soc_end >= params.c_thr - EPS,
            Regime::NonPvCharge => soc_end <= params.c_thr + EPS,
            Regime::PvCharge => soc_end <= params.pv_charge_target.min(1.0) + EPS,
        };
        if !ok {
            return fail(format!("{} ends at soc {soc_end}", e.regime));
        }
    }
    Ok(())
}

fn soc_at_end_of(trace: &SocTrace, event: &ChargeEvent) -> f64 {
    // Last breakpoint at the event's end instant before any jump.
    trace
        .breakpoints
        .iter()
        .find(|(t, _)| *t == event.end)
        .map(|p| p.1)
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: f64 = 3600.0;

    fn grid() -> GridSpec {
        GridSpec::new(1.2, 103.6, 250.0, 200, 200).unwrap()
    }

    fn one(cell: CellId, start_h: f64, end_h: f64) -> DayStay {
        DayStay {
            cell,
            start: start_h * H,
            end: end_h * H,
        }
    }

    fn run(stays: &[DayStay], params: &VehicleParams) -> SocTrace {
        let trace =
            simulate_day("u", 0, stays, params, &PvWindow::default(), &grid()).unwrap();
        verify_trace(&trace, params, &PvWindow::default()).unwrap();
        trace
    }

    #[test]
    fn depletion_values() {
        let p = VehicleParams::default();
        assert_eq!(depletion(0.0, &p).unwrap(), 0.0);
        assert!((depletion(135.0, &p).unwrap() - 25.0).abs() < 1e-12);
        assert!((depletion(10.0, &p).unwrap() - 1.851_851_851_85).abs() < 1e-9);
        assert!(depletion(-1.0, &p).is_err());
    }

    #[test]
    fn evening_discharge_to_threshold() {
        let p = VehicleParams {
            c_init: 0.9,
            ..Default::default()
        };
        let t = run(&[one(CellId::new(0, 0), 18.0, 21.0)], &p);
        assert_eq!(t.events.len(), 1);
        let e = &t.events[0];
        assert_eq!(e.regime, Regime::Discharge);
        assert!((e.energy_kwh - 10.0).abs() < 1e-9);
        assert!((e.duration_h() - 10.0 / 6.6).abs() < 1e-9);
        assert_eq!(t.final_soc(), 0.5);
    }

    #[test]
    fn daytime_charge_to_full() {
        let t = run(&[one(CellId::new(0, 0), 9.0, 17.0)], &VehicleParams::default());
        assert_eq!(t.events.len(), 1);
        let e = &t.events[0];
        assert_eq!(e.regime, Regime::PvCharge);
        assert!((e.energy_kwh - 12.5).abs() < 1e-9);
        assert!((e.duration_h() - 12.5 / 6.6).abs() < 1e-9);
        assert_eq!(t.final_soc(), 1.0);
    }

    #[test]
    fn threshold_is_idle_then_pv() {
        let t = run(&[one(CellId::new(0, 0), 8.0, 10.0)], &VehicleParams::default());
        assert_eq!(t.events.len(), 1);
        let e = &t.events[0];
        assert_eq!((e.regime, e.start, e.end), (Regime::PvCharge, 9.0 * H, 10.0 * H));
        assert!((e.energy_kwh - 6.6).abs() < 1e-12);
        assert!((t.final_soc() - 0.764).abs() < 1e-12);
    }

    #[test]
    fn no_stays_flat_trace() {
        let t = run(&[], &VehicleParams::default());
        assert!(t.events.is_empty());
        assert_eq!(t.breakpoints, vec![(0.0, 0.5), (86_400.0, 0.5)]);
    }

    #[test]
    fn low_soc_evening_charges_to_threshold() {
        let p = VehicleParams {
            c_init: 0.2,
            ..Default::default()
        };
        let t = run(&[one(CellId::new(0, 0), 20.0, 23.0)], &p);
        let e = &t.events[0];
        assert_eq!(e.regime, Regime::NonPvCharge);
        assert!((e.energy_kwh - 0.3 * 25.0).abs() < 1e-9);
        assert_eq!(t.final_soc(), 0.5);
    }

    #[test]
    fn stay_straddling_window_start_switches_regime() {
        let p = VehicleParams {
            c_init: 0.9,
            ..Default::default()
        };
        // 08:00-10:00: discharge for an hour, then PV charge for an hour.
        let t = run(&[one(CellId::new(0, 0), 8.0, 10.0)], &p);
        let regimes: Vec<_> = t.events.iter().map(|e| e.regime).collect();
        assert_eq!(regimes, vec![Regime::Discharge, Regime::PvCharge]);
        assert!((t.events[0].energy_kwh - 6.6).abs() < 1e-12);
        assert!((t.final_soc() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn driving_depletes_at_arrival() {
        let g = grid();
        let a = CellId::new(0, 0);
        let b = CellId::new(0, 40);
        let km = g.cell_distance_m(a, b) / 1000.0;
        let p = VehicleParams::default();
        // Both stays outside the window at threshold: arrival drop then
        // non-PV charge back to the threshold.
        let t = run(&[one(a, 1.0, 2.0), one(b, 3.0, 6.0)], &p);
        assert_eq!(t.jumps.len(), 1);
        assert!((t.jumps[0].soc_drop - km / 135.0).abs() < 1e-12);
        let e = &t.events[0];
        assert_eq!(e.regime, Regime::NonPvCharge);
        assert!((e.energy_kwh - km / 135.0 * 25.0).abs() < 1e-9);
        assert!((t.final_soc() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn long_trip_clamps_at_zero() {
        let g = GridSpec::new(1.2, 103.6, 5000.0, 1, 100).unwrap();
        let p = VehicleParams::default();
        let stays = [one(CellId::new(0, 0), 1.0, 2.0), one(CellId::new(0, 99), 2.5, 3.0)];
        let t = simulate_day("u", 0, &stays, &p, &PvWindow::default(), &g).unwrap();
        assert_eq!(t.range_exceeded, 1);
        assert!(t.jumps[0].clamped);
        assert_eq!(t.jumps[0].soc_drop, 0.5);
        verify_trace(&t, &p, &PvWindow::default()).unwrap();
        assert!(t.breakpoints.iter().all(|(_, s)| *s >= 0.0));
    }

    #[test]
    fn rejects_bad_stays() {
        let p = VehicleParams::default();
        let w = PvWindow::default();
        let g = grid();
        let c = CellId::new(0, 0);
        assert!(simulate_day("u", 0, &[one(c, 23.0, 25.0)], &p, &w, &g).is_err());
        assert!(simulate_day("u", 0, &[one(c, 5.0, 7.0), one(c, 6.0, 8.0)], &p, &w, &g).is_err());
        assert!(simulate_day("u", 0, &[one(c, 5.0, 5.0)], &p, &w, &g).is_err());
    }

    #[test]
    fn pv_target_configurable() {
        let p = VehicleParams {
            pv_charge_target: 0.6,
            ..Default::default()
        };
        let t = run(&[one(CellId::new(0, 0), 9.0, 17.0)], &p);
        assert!((t.events[0].energy_kwh - 2.5).abs() < 1e-9);
        assert_eq!(t.final_soc(), 0.6);
    }

    #[test]
    fn invalid_params_and_window() {
        assert!(VehicleParams { c_thr: 1.5, ..Default::default() }.validate().is_err());
        assert!(VehicleParams { c_max_kwh: 0.0, ..Default::default() }.validate().is_err());
        assert!(PvWindow::new(17 * 3600, 9 * 3600).is_err());
        assert!(PvWindow::new(0, 86_400).is_ok());
    }

    fn traj(stays: &[(CellId, i64, i64)]) -> Trajectory {
        Trajectory {
            user_id: "u".into(),
            stays: stays
                .iter()
                .map(|&(cell, a, d)| crate::ingest::Stay {
                    user_id: "u".into(),
                    cell,
                    arrival: a,
                    departure: d,
                })
                .collect(),
        }
    }

    #[test]
    fn scenario_one_trace_per_day() {
        let c = CellId::new(0, 0);
        let t = traj(&[(c, 8 * 3600, 12 * 3600)]);
        let traces = run_scenario(
            &[t],
            &VehicleParams::default(),
            &PvWindow::default(),
            &grid(),
            LocalZone::utc(),
            0..=1,
        )
        .unwrap();
        assert_eq!(traces.len(), 2);
        assert!(traces[1].events.is_empty());
    }

    #[test]
    fn midnight_split_resets_soc() {
        let c = CellId::new(0, 0);
        let t = traj(&[(c, 23 * 3600, 25 * 3600 + 1800)]);
        let p = VehicleParams {
            c_init: 0.8,
            ..Default::default()
        };
        let traces =
            run_scenario(&[t], &p, &PvWindow::default(), &grid(), LocalZone::utc(), 0..=1).unwrap();
        let d0 = &traces[0].events[0];
        assert_eq!((d0.start, d0.end), (23.0 * H, 24.0 * H));
        assert!((d0.energy_kwh - 6.6).abs() < 1e-12);
        let d1 = &traces[1].events[0];
        assert_eq!(d1.start, 0.0);
        // 0.3 of headroom is exhausted before 01:30.
        assert!((d1.energy_kwh - 7.5).abs() < 1e-12);
        assert_eq!(traces[1].initial_soc(), 0.8);
    }
}
