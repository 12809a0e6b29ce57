//! Synthetic stand-ins for the real inputs: a city-sized grid, rectangular
//! planning areas with household data, and a residential demand curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2g_core::geo::{GridSpec, PlanningArea};
use v2g_core::household::DemandCurve;

pub const DEMO_ORIGIN: (f64, f64) = (1.22, 103.6);
pub const DEMO_CELL_M: f64 = 250.0;
pub const DEMO_ROWS: u32 = 100;
pub const DEMO_COLS: u32 = 160;
/// Planning areas are square blocks of this many cells.
pub const AREA_BLOCK: u32 = 20;

/// 25 km x 40 km of 250 m cells.
pub fn demo_grid() -> GridSpec {
    GridSpec::new(DEMO_ORIGIN.0, DEMO_ORIGIN.1, DEMO_CELL_M, DEMO_ROWS, DEMO_COLS)
        .expect("demo grid is valid")
}

/// 5 x 8 blocks of 5 km, minus the north-east corner, which stays unmapped.
/// Household counts peak towards the centre.
pub fn demo_areas(seed: u64) -> Vec<PlanningArea> {
    let grid = demo_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block_m = AREA_BLOCK as f64 * DEMO_CELL_M;
    let (block_rows, block_cols) = (DEMO_ROWS / AREA_BLOCK, DEMO_COLS / AREA_BLOCK);
    let mut areas = Vec::new();
    for r in 0..block_rows {
        for c in 0..block_cols {
            let households = rng.gen_range(4_000.0..30_000.0f64).round();
            let kwh = rng.gen_range(300.0..550.0f64).round();
            if r == block_rows - 1 && c == block_cols - 1 {
                continue;
            }
            let (lat0, lon0) = grid.unproject(c as f64 * block_m, r as f64 * block_m);
            let (lat1, lon1) = grid.unproject((c + 1) as f64 * block_m, (r + 1) as f64 * block_m);
            let dr = r as f64 + 0.5 - block_rows as f64 / 2.0;
            let dc = c as f64 + 0.5 - block_cols as f64 / 2.0;
            let centrality = (-(dr * dr + dc * dc) / 8.0).exp();
            let area = PlanningArea::rectangle(
                format!("PA{:02}", r * block_cols + c + 1),
                format!("Block {r}-{c}"),
                lat0,
                lon0,
                lat1,
                lon1,
            )
            .expect("demo area is valid")
            .with_households((households * (0.4 + centrality)).round(), kwh);
            areas.push(area);
        }
    }
    areas
}

/// Half-hourly household load shape with morning and evening peaks.
pub fn demo_demand_curve() -> DemandCurve {
    let bump = |h: f64, centre: f64, width: f64| (-((h - centre) / width).powi(2)).exp();
    let samples = (0..48)
        .map(|k| {
            let h = k as f64 / 2.0 + 0.25;
            let v = 0.30 + 0.25 * bump(h, 7.5, 1.2) + 0.12 * bump(h, 13.0, 2.5)
                + 0.65 * bump(h, 20.5, 2.2);
            (v * 1000.0).round() / 1000.0
        })
        .collect();
    DemandCurve::new(samples).expect("demo curve is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use v2g_core::geo::AreaIndex;

    #[test]
    fn areas_tile_the_grid_except_one_block() {
        let areas = demo_areas(7);
        assert_eq!(areas.len(), 39);
        let index = AreaIndex::build(&demo_grid(), &areas).unwrap();
        assert_eq!(index.unassigned_cells(), (AREA_BLOCK * AREA_BLOCK) as usize);
        assert!(areas.iter().all(|a| a.households.unwrap() > 0.0));
    }

    #[test]
    fn demand_curve_has_an_evening_peak() {
        let c = demo_demand_curve();
        let s = c.samples();
        let peak = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert!((38..=44).contains(&peak), "peak at {peak}");
    }
}
