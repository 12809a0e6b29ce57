//! Property tests for the invariants of each pipeline stage.

use proptest::prelude::*;

use v2g_core::aggregation::{accumulate, aggregate, ScalingConfig};
use v2g_core::engine::{
    conservation_residual, simulate_day, verify_trace, DayStay, PvWindow, Regime, SocTrace,
    VehicleParams,
};
use v2g_core::geo::{AreaIndex, CellId, GridSpec, PlanningArea};
use v2g_core::household::{night_fraction, regression, DemandCurve};
use v2g_core::ingest::{extract_stays, ingest, IngestConfig, LocationRecord};
use v2g_core::synth::{generate_user, plan_user, SynthConfig};
use v2g_core::time::LocalZone;

fn grid() -> GridSpec {
    GridSpec::new(1.25, 103.7, 250.0, 40, 40).unwrap()
}

fn quadrant_areas(g: &GridSpec) -> Vec<PlanningArea> {
    let (lat_mid, lon_mid) = g.unproject(20.0 * 250.0, 20.0 * 250.0);
    let (lat_max, lon_max) = g.unproject(40.0 * 250.0, 40.0 * 250.0);
    let (lat0, lon0) = (g.origin_lat, g.origin_lon);
    vec![
        PlanningArea::rectangle("A1", "sw", lat0, lon0, lat_mid, lon_mid).unwrap(),
        PlanningArea::rectangle("A2", "se", lat0, lon_mid, lat_mid, lon_max).unwrap(),
        PlanningArea::rectangle("A3", "nw", lat_mid, lon0, lat_max, lon_mid).unwrap(),
        // North-east quadrant left unmapped on purpose.
    ]
}

fn arb_cell() -> impl Strategy<Value = CellId> {
    (0u32..40, 0u32..40).prop_map(|(r, c)| CellId::new(r, c))
}

/// Up to five minute-aligned stays in one day.
fn arb_day() -> impl Strategy<Value = Vec<DayStay>> {
    prop::collection::vec((arb_cell(), 1u32..600, 0u32..90), 0..=5).prop_map(|parts| {
        let mut t = 0u32;
        let mut stays = Vec::new();
        for (cell, len, gap) in parts {
            let start = t + gap;
            let end = (start + len).min(1440);
            if end <= start {
                break;
            }
            stays.push(DayStay {
                cell,
                start: start as f64 * 60.0,
                end: end as f64 * 60.0,
            });
            t = end;
        }
        stays
    })
}

fn arb_params() -> impl Strategy<Value = VehicleParams> {
    (0.0f64..=1.0, 0.0f64..=1.0, 3.0f64..12.0, 3.0f64..12.0).prop_map(
        |(c_thr, c_init, p_charge_kw, p_discharge_kw)| VehicleParams {
            c_thr,
            c_init,
            p_charge_kw,
            p_discharge_kw,
            ..Default::default()
        },
    )
}

fn sim(stays: &[DayStay], p: &VehicleParams) -> SocTrace {
    simulate_day("u", 0, stays, p, &PvWindow::default(), &grid()).unwrap()
}

proptest! {
    #[test]
    fn locate_inverts_centroid(e in 0.0f64..10_000.0, n in 0.0f64..10_000.0) {
        let g = grid();
        let (lat, lon) = g.unproject(e, n);
        let cell = g.locate(lat, lon).unwrap().unwrap();
        let (clat, clon) = g.centroid(cell);
        let (ce, cn) = g.project(clat, clon);
        let d = ((ce - e).powi(2) + (cn - n).powi(2)).sqrt();
        prop_assert!(d <= 250.0 * 2f64.sqrt() / 2.0 + 1e-6);
    }

    #[test]
    fn cell_distance_is_a_metric(a in arb_cell(), b in arb_cell(), c in arb_cell()) {
        let g = grid();
        let ab = g.cell_distance_m(a, b);
        prop_assert_eq!(ab, g.cell_distance_m(b, a));
        prop_assert_eq!(ab == 0.0, a == b);
        prop_assert!(g.cell_distance_m(a, c) <= ab + g.cell_distance_m(b, c) + 1e-6);
    }

    #[test]
    fn engine_invariants(stays in arb_day(), p in arb_params()) {
        let trace = sim(&stays, &p);
        prop_assert!(verify_trace(&trace, &p, &PvWindow::default()).is_ok(),
            "{:?}", verify_trace(&trace, &p, &PvWindow::default()));
        prop_assert!(trace.breakpoints.iter().all(|(_, s)| (0.0..=1.0).contains(s)));
        if trace.range_exceeded == 0 {
            prop_assert!(conservation_residual(&trace, &p) < 1e-9);
        }
    }

    #[test]
    fn raising_threshold_never_adds_discharge(
        stays in arb_day(),
        p in arb_params(),
        bump in 0.0f64..0.5,
    ) {
        let low = sim(&stays, &p);
        let high_params = VehicleParams { c_thr: (p.c_thr + bump).min(1.0), ..p };
        let high = sim(&stays, &high_params);
        prop_assert!(
            high.energy(Regime::Discharge) <= low.energy(Regime::Discharge) + 1e-9
        );
    }

    #[test]
    fn doubling_delta_doubles_everything(stays in arb_day(), delta in 0.01f64..0.5) {
        let g = grid();
        let areas = quadrant_areas(&g);
        let index = AreaIndex::build(&g, &areas).unwrap();
        let p = VehicleParams { c_init: 0.9, ..Default::default() };
        let traces = vec![sim(&stays, &p)];
        let one = ScalingConfig::new(delta, 10, 1000.0, 900).unwrap();
        let two = ScalingConfig { delta: 2.0 * delta, ..one };
        let a = aggregate(&traces, &index, &areas, &one, 6.6).unwrap();
        let b = aggregate(&traces, &index, &areas, &two, 6.6).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(y.e_ev_kwh, 2.0 * x.e_ev_kwh);
            prop_assert_eq!(y.demand.peak_kw, 2.0 * x.demand.peak_kw);
            prop_assert_eq!(y.demand.peak_step, x.demand.peak_step);
            for (u, v) in x.demand.profile_kw.iter().zip(&y.demand.profile_kw) {
                prop_assert_eq!(*v, 2.0 * u);
            }
        }
    }

    #[test]
    fn aggregation_conserves_and_peaks(days in prop::collection::vec(arb_day(), 1..6)) {
        let g = grid();
        let areas = quadrant_areas(&g);
        let index = AreaIndex::build(&g, &areas).unwrap();
        let p = VehicleParams { c_init: 0.8, ..Default::default() };
        let traces: Vec<_> = days.iter().map(|d| sim(d, &p)).collect();
        let per_trace: f64 = traces.iter().map(|t| t.energy(Regime::Discharge)).sum();
        let totals = accumulate(&traces, &index, 900).unwrap();
        let per_area: f64 = totals.by_area_day.values().map(|t| t.discharge_kwh).sum();
        prop_assert!((per_area - per_trace).abs() <= 1e-9 * per_trace.max(1.0));

        let s15 = ScalingConfig::new(0.5, 5, 10.0, 900).unwrap();
        let s1 = ScalingConfig { time_step: 60, ..s15 };
        let coarse = aggregate(&traces, &index, &areas, &s15, 6.6).unwrap();
        let fine = aggregate(&traces, &index, &areas, &s1, 6.6).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            let mean = c.demand.profile_kw.iter().sum::<f64>() / c.demand.profile_kw.len() as f64;
            prop_assert!(c.demand.peak_kw >= mean);
            prop_assert!(f.demand.peak_kw >= c.demand.peak_kw * (1.0 - 1e-12));
        }

        // Trace order only perturbs rounding.
        let mut reversed = traces.clone();
        reversed.reverse();
        let back = aggregate(&reversed, &index, &areas, &s15, 6.6).unwrap();
        for (x, y) in coarse.iter().zip(&back) {
            prop_assert!((x.e_ev_kwh - y.e_ev_kwh).abs() <= 1e-9 * x.e_ev_kwh.max(1.0));
            prop_assert!((x.demand.peak_kw - y.demand.peak_kw).abs() <= 1e-9 * x.demand.peak_kw.max(1.0));
        }
    }

    #[test]
    fn night_fraction_bounded_and_scale_free(
        samples in prop::collection::vec(0.0f64..100.0, 48),
        k in 0.01f64..1000.0,
    ) {
        prop_assume!(samples.iter().sum::<f64>() > 0.0);
        let w = PvWindow::default();
        let f = night_fraction(&DemandCurve::new(samples.clone()).unwrap(), &w).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let scaled: Vec<f64> = samples.iter().map(|v| v * k).collect();
        let g = night_fraction(&DemandCurve::new(scaled).unwrap(), &w).unwrap();
        prop_assert!((f - g).abs() < 1e-12);
    }

    #[test]
    fn r_squared_is_r_squared(
        pts in prop::collection::vec((1.0f64..1000.0, 0.0f64..200.0), 3..40),
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let Ok(s) = regression(&x, &y) {
            if s.r_squared > 0.0 {
                prop_assert!((s.r_squared - s.pearson_r.powi(2)).abs() < 1e-12);
            }
            prop_assert!((-1.0..=1.0).contains(&s.pearson_r));
            prop_assert!((0.0..=1.0).contains(&s.p_value));
        }
    }

    #[test]
    fn stays_respect_tau_and_shuffling(
        pings in prop::collection::vec((0i64..2000, arb_cell()), 1..120),
        seed in any::<u64>(),
    ) {
        let g = grid();
        let mut cfg = IngestConfig::new(g.clone());
        cfg.min_consecutive_days = 1;
        let mut records: Vec<LocationRecord> = pings
            .iter()
            .map(|(minute, cell)| {
                let (lat, lon) = g.centroid(*cell);
                LocationRecord::new("u", 1_600_000_000 + minute * 60, lat, lon)
            })
            .collect();
        records.sort_by_key(|r| r.timestamp);
        let out = ingest(records.clone(), &cfg).unwrap();
        for t in &out.trajectories {
            prop_assert!(t.stays.iter().all(|s| s.duration() >= cfg.tau));
            prop_assert!(t.stays.windows(2).all(|w| w[0].departure <= w[1].arrival));
        }
        // Deterministic shuffle.
        let mut shuffled = records.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let again = ingest(shuffled, &cfg).unwrap();
        prop_assert_eq!(&out.trajectories, &again.trajectories);
    }

    #[test]
    fn dropping_a_ping_never_lengthens_a_stay(
        pings in prop::collection::vec((0i64..600, 0u32..3), 2..80),
        drop_at in any::<prop::sample::Index>(),
    ) {
        let g = grid();
        let cfg = IngestConfig::new(g.clone());
        let mut records: Vec<LocationRecord> = pings
            .iter()
            .map(|(minute, col)| {
                let (lat, lon) = g.centroid(CellId::new(0, *col));
                LocationRecord::new("u", minute * 60, lat, lon)
            })
            .collect();
        records.sort_by_key(|r| r.timestamp);
        let full = extract_stays(&records, &cfg).unwrap();
        let i = drop_at.index(records.len());
        let cell = |k: usize| g.locate(records[k].lat, records[k].lon).unwrap();
        // A lone ping separating two runs of one cell joins them when removed.
        let bridges = i > 0 && i + 1 < records.len()
            && cell(i - 1) == cell(i + 1)
            && cell(i) != cell(i - 1);
        prop_assume!(!bridges);
        records.remove(i);
        let fewer = extract_stays(&records, &cfg).unwrap();
        for s in &fewer {
            let covering = full
                .iter()
                .find(|f| f.cell == s.cell && f.arrival <= s.arrival && s.departure <= f.departure);
            prop_assert!(covering.is_some(), "stay {:?} not within original stays {:?}", s, full);
        }
    }
}

#[test]
fn dropping_a_bridging_ping_joins_runs() {
    let g = grid();
    let cfg = IngestConfig::new(g.clone());
    let at = |minute: i64, col: u32| {
        let (lat, lon) = g.centroid(CellId::new(0, col));
        LocationRecord::new("u", minute * 60, lat, lon)
    };
    let mut records = vec![at(0, 0), at(40, 0), at(50, 1), at(60, 0), at(100, 0)];
    assert!(extract_stays(&records, &cfg).unwrap().is_empty());
    records.remove(2);
    let joined = extract_stays(&records, &cfg).unwrap();
    assert_eq!(joined.len(), 1);
    assert_eq!((joined[0].arrival, joined[0].departure), (0, 6000));
}

#[test]
fn synthetic_round_trip_recovers_planted_stays() {
    let g = grid();
    let mut cfg = SynthConfig::for_grid(&g, 2024, 40, 6);
    cfg.travel_minutes = (60.0, 120.0);
    cfg.work_hours = (1.0, 8.0);
    cfg.amenity_hours = (1.0, 3.0);
    let mut icfg = IngestConfig::new(g.clone());
    icfg.zone = cfg.zone;
    for i in 0..cfg.n_users {
        let plan = plan_user(&cfg, i).unwrap();
        let records = generate_user(&cfg, &g, i).unwrap();
        let stays = extract_stays(&records, &icfg).unwrap();
        let planted: Vec<_> = plan
            .iter()
            .filter(|p| p.end - p.start >= icfg.tau)
            .map(|p| (p.cell, p.start, p.end))
            .collect();
        let found: Vec<_> = stays.iter().map(|s| (s.cell, s.arrival, s.departure)).collect();
        assert_eq!(found.len(), planted.len(), "user {i}: {planted:?} vs {found:?}");
        let interval = cfg.ping_interval_min as i64 * 60;
        for (f, p) in found.iter().zip(&planted) {
            assert_eq!(f.0, p.0);
            assert!((f.1 - p.1).abs() <= interval && (f.2 - p.2).abs() <= interval);
        }
    }
}

#[test]
fn scenario_is_schedule_independent() {
    let g = grid();
    let cfg = SynthConfig::for_grid(&g, 5, 64, 5);
    let records = v2g_core::synth::generate(&cfg, &g).unwrap();
    let mut icfg = IngestConfig::new(g.clone());
    icfg.zone = cfg.zone;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let out = ingest(records.clone(), &icfg).unwrap();
            let days = cfg.start_day..=cfg.start_day + cfg.n_days as i64 - 1;
            v2g_core::engine::run_scenario(
                &out.trajectories,
                &VehicleParams::default(),
                &PvWindow::default(),
                &g,
                LocalZone::default(),
                days,
            )
            .unwrap()
        })
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn area_index_is_deterministic() {
    let g = grid();
    let areas = quadrant_areas(&g);
    let a = AreaIndex::build(&g, &areas).unwrap();
    let b = AreaIndex::build(&g, &areas).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.unassigned_cells(), 400);
}
