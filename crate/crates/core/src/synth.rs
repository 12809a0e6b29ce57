//! Reproducible synthetic users for demos and pipeline verification.
//!
//! Each user has a home cell and follows home-anchored day loops:
//! home, then zero or more work/amenity stays, then home again. Stays emit
//! pings at a fixed interval (endpoints included); travel between stays
//! emits nothing and takes a sampled gap.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;

use crate::error::{invalid_config, Result};
use crate::geo::{CellId, GridSpec};
use crate::ingest::LocationRecord;
use crate::time::{DayIndex, LocalZone, Timestamp, SECONDS_PER_DAY};

/// Weighted pool of candidate cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPool {
    pub cells: Vec<(CellId, f64)>,
}

impl CellPool {
    pub fn uniform(cells: impl IntoIterator<Item = CellId>) -> Self {
        Self {
            cells: cells.into_iter().map(|c| (c, 1.0)).collect(),
        }
    }

    fn sampler(&self, name: &str) -> Result<WeightedIndex<f64>> {
        if self.cells.is_empty() {
            return Err(invalid_config(format!("{name} cell pool is empty")));
        }
        WeightedIndex::new(self.cells.iter().map(|(_, w)| *w))
            .map_err(|e| invalid_config(format!("{name} cell pool weights: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub n_users: u32,
    pub n_days: u32,
    /// First simulated local day.
    pub start_day: DayIndex,
    pub zone: LocalZone,
    pub home_cells: CellPool,
    pub work_cells: CellPool,
    pub amenity_cells: CellPool,
    /// Probability that a day includes a work stay.
    pub work_probability: f64,
    /// Mean number of out-of-home stays per day (Poisson).
    pub mean_stays_per_day: f64,
    /// Uniform range of hours-after-midnight when the user first leaves home.
    pub leave_home_hours: (f64, f64),
    pub work_hours: (f64, f64),
    pub amenity_hours: (f64, f64),
    pub travel_minutes: (f64, f64),
    pub ping_interval_min: u32,
    /// Scatter pings uniformly inside the central 70% of their cell.
    pub jitter: bool,
}

impl SynthConfig {
    /// Default itinerary parameters with pools drawn from `grid`: homes over
    /// every cell, workplaces biased to the grid centre, and a sparse set of
    /// amenity hot spots.
    pub fn for_grid(grid: &GridSpec, rng_seed: u64, n_users: u32, n_days: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(u64::MAX);
        let all: Vec<CellId> = (0..grid.n_cells()).map(|i| grid.cell_at(i)).collect();
        let (cr, cc) = (grid.n_rows as f64 / 2.0, grid.n_cols as f64 / 2.0);
        let reach = (cr.max(cc) / 3.0).max(1.0);
        let work = all
            .iter()
            .map(|&c| {
                let d = ((c.row as f64 + 0.5 - cr).powi(2) + (c.col as f64 + 0.5 - cc).powi(2))
                    .sqrt();
                (c, (-(d / reach).powi(2)).exp())
            })
            .filter(|(_, w)| *w > 1e-3)
            .collect();
        let mut amenity = Vec::new();
        for &c in &all {
            if rng.gen_bool(0.03) {
                amenity.push((c, rng.gen_range(0.2..1.0f64).powi(3)));
            }
        }
        if amenity.is_empty() {
            amenity.push((all[rng.gen_range(0..all.len())], 1.0));
        }
        Self {
            rng_seed,
            n_users,
            n_days,
            start_day: LocalZone::default().day_of_date(
                chrono::NaiveDate::from_ymd_opt(2020, 9, 1).expect("valid date"),
            ),
            zone: LocalZone::default(),
            home_cells: CellPool::uniform(all),
            work_cells: CellPool { cells: work },
            amenity_cells: CellPool { cells: amenity },
            work_probability: 0.6,
            mean_stays_per_day: 1.5,
            leave_home_hours: (6.5, 9.5),
            work_hours: (6.0, 9.5),
            amenity_hours: (1.0, 3.5),
            travel_minutes: (10.0, 50.0),
            ping_interval_min: 15,
            jitter: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_days == 0 {
            return Err(invalid_config("n_users and n_days must be at least 1"));
        }
        if self.ping_interval_min == 0 {
            return Err(invalid_config("ping interval must be at least 1 minute"));
        }
        self.home_cells.sampler("home")?;
        self.work_cells.sampler("work")?;
        self.amenity_cells.sampler("amenity")?;
        if !(0.0..=1.0).contains(&self.work_probability) {
            return Err(invalid_config("work_probability must be in [0, 1]"));
        }
        if !(self.mean_stays_per_day.is_finite() && self.mean_stays_per_day >= 0.0) {
            return Err(invalid_config("mean_stays_per_day must be non-negative"));
        }
        for (name, (lo, hi)) in [
            ("leave_home_hours", self.leave_home_hours),
            ("work_hours", self.work_hours),
            ("amenity_hours", self.amenity_hours),
            ("travel_minutes", self.travel_minutes),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(invalid_config(format!("{name} needs 0 < min <= max")));
            }
        }
        if self.leave_home_hours.1 >= 24.0 {
            return Err(invalid_config("leave_home_hours must end before midnight"));
        }
        Ok(())
    }
}

/// A stay planted by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedStay {
    pub cell: CellId,
    pub start: Timestamp,
    pub end: Timestamp,
}

pub fn user_id(index: u32) -> String {
    format!("u{index:06}")
}

fn user_rng(cfg: &SynthConfig, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(index as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn whole_seconds(hours: f64) -> i64 {
    (hours * 3600.0).round() as i64
}

/// Planted itinerary of one user, in time order, together with the RNG
/// state left for ping emission.
fn plan_with_rng(cfg: &SynthConfig, index: u32) -> Result<(Vec<PlannedStay>, ChaCha8Rng)> {
    let homes = cfg.home_cells.sampler("home")?;
    let works = cfg.work_cells.sampler("work")?;
    let amenities = cfg.amenity_cells.sampler("amenity")?;
    let n_out = Poisson::new(cfg.mean_stays_per_day.max(1e-9))
        .map_err(|e| invalid_config(format!("mean_stays_per_day: {e}")))?;
    let mut rng = user_rng(cfg, index);
    let home = cfg.home_cells.cells[homes.sample(&mut rng)].0;

    let mut plan = Vec::new();
    let mut home_since = cfg.zone.day_start(cfg.start_day);
    for d in 0..cfg.n_days as i64 {
        let day_start = cfg.zone.day_start(cfg.start_day + d);
        let latest_end = day_start + SECONDS_PER_DAY - 3600;
        let leave = day_start + whole_seconds(uniform(&mut rng, cfg.leave_home_hours));
        let with_work = rng.gen_bool(cfg.work_probability);
        let extra: f64 = n_out.sample(&mut rng);
        let n_stays = extra as usize + usize::from(with_work);

        let mut outings = Vec::new();
        let mut t = leave;
        let mut prev = home;
        for k in 0..n_stays {
            let (cell, hours) = if k == 0 && with_work {
                (cfg.work_cells.cells[works.sample(&mut rng)].0, cfg.work_hours)
            } else {
                (cfg.amenity_cells.cells[amenities.sample(&mut rng)].0, cfg.amenity_hours)
            };
            let travel = whole_seconds(uniform(&mut rng, cfg.travel_minutes) / 60.0);
            let duration = whole_seconds(uniform(&mut rng, hours));
            if cell == prev || cell == home {
                continue;
            }
            let start = t + travel;
            let end = start + duration;
            if end > latest_end {
                break;
            }
            outings.push(PlannedStay { cell, start, end });
            t = end;
            prev = cell;
        }
        if outings.is_empty() {
            continue;
        }
        plan.push(PlannedStay {
            cell: home,
            start: home_since,
            end: leave,
        });
        let back = t + whole_seconds(uniform(&mut rng, cfg.travel_minutes) / 60.0);
        plan.extend(outings);
        home_since = back;
    }
    let horizon = cfg.zone.day_start(cfg.start_day + cfg.n_days as i64);
    if home_since < horizon {
        plan.push(PlannedStay {
            cell: home,
            start: home_since,
            end: horizon,
        });
    }
    Ok((plan, rng))
}

/// Planted stays of user `index`.
pub fn plan_user(cfg: &SynthConfig, index: u32) -> Result<Vec<PlannedStay>> {
    plan_with_rng(cfg, index).map(|(plan, _)| plan)
}

/// Pings for one planned stay: every `interval` seconds from the start, plus
/// the end instant.
pub fn stay_pings(
    user: &str,
    stay: &PlannedStay,
    interval: i64,
    grid: &GridSpec,
    mut jitter: Option<&mut ChaCha8Rng>,
) -> Vec<LocationRecord> {
    let mut times: Vec<Timestamp> = (stay.start..=stay.end).step_by(interval as usize).collect();
    if times.last() != Some(&stay.end) {
        times.push(stay.end);
    }
    times
        .into_iter()
        .map(|t| {
            let (fx, fy) = match jitter.as_deref_mut() {
                Some(rng) => (rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)),
                None => (0.5, 0.5),
            };
            let (lat, lon) = grid.unproject(
                (stay.cell.col as f64 + fx) * grid.cell_size_m,
                (stay.cell.row as f64 + fy) * grid.cell_size_m,
            );
            // Rounded to the precision written to CSV so that in-memory and
            // file-based runs see identical records.
            LocationRecord::new(user, t, round7(lat), round7(lon))
        })
        .collect()
}

fn round7(x: f64) -> f64 {
    format!("{x:.7}").parse().expect("formatted float")
}

/// Records of a single user, time ordered.
pub fn generate_user(cfg: &SynthConfig, grid: &GridSpec, index: u32) -> Result<Vec<LocationRecord>> {
    let (plan, mut rng) = plan_with_rng(cfg, index)?;
    let user = user_id(index);
    let interval = cfg.ping_interval_min as i64 * 60;
    let mut out = Vec::new();
    for stay in &plan {
        let jitter = cfg.jitter.then_some(&mut rng);
        out.extend(stay_pings(&user, stay, interval, grid, jitter));
    }
    Ok(out)
}

/// Records for all users, ordered by user then time. Users are generated in
/// parallel from independent streams, so output does not depend on the
/// thread count.
pub fn generate(cfg: &SynthConfig, grid: &GridSpec) -> Result<Vec<LocationRecord>> {
    cfg.validate()?;
    for (name, pool) in [
        ("home", &cfg.home_cells),
        ("work", &cfg.work_cells),
        ("amenity", &cfg.amenity_cells),
    ] {
        if pool.cells.iter().any(|(c, _)| !grid.contains_cell(*c)) {
            return Err(invalid_config(format!("{name} pool has cells outside the grid")));
        }
    }
    let per_user: Vec<Vec<LocationRecord>> = (0..cfg.n_users)
        .into_par_iter()
        .map(|i| generate_user(cfg, grid, i))
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_stays, IngestConfig};

    fn grid() -> GridSpec {
        GridSpec::new(1.2, 103.6, 250.0, 20, 30).unwrap()
    }

    #[test]
    fn same_seed_same_records() {
        let g = grid();
        let cfg = SynthConfig::for_grid(&g, 42, 20, 3);
        assert_eq!(generate(&cfg, &g).unwrap(), generate(&cfg, &g).unwrap());
        let other = SynthConfig::for_grid(&g, 43, 20, 3);
        assert_ne!(generate(&cfg, &g).unwrap(), generate(&other, &g).unwrap());
    }

    #[test]
    fn two_hour_stay_at_quarter_hours_gives_nine_pings() {
        let g = grid();
        let stay = PlannedStay {
            cell: CellId::new(3, 4),
            start: 1_600_000_000,
            end: 1_600_000_000 + 7200,
        };
        let pings = stay_pings("u", &stay, 900, &g, None);
        assert_eq!(pings.len(), 9);
        assert!(pings
            .iter()
            .all(|p| g.locate(p.lat, p.lon).unwrap() == Some(stay.cell)));
    }

    #[test]
    fn unaligned_end_gets_final_ping() {
        let g = grid();
        let stay = PlannedStay {
            cell: CellId::new(0, 0),
            start: 0,
            end: 1000,
        };
        let times: Vec<_> = stay_pings("u", &stay, 900, &g, None)
            .iter()
            .map(|p| p.timestamp)
            .collect();
        assert_eq!(times, vec![0, 900, 1000]);
    }

    #[test]
    fn short_stays_vanish_under_tau() {
        let g = grid();
        let mut cfg = SynthConfig::for_grid(&g, 7, 30, 3);
        cfg.work_hours = (0.2, 0.9);
        cfg.amenity_hours = (0.2, 0.9);
        cfg.mean_stays_per_day = 3.0;
        let icfg = IngestConfig::new(g.clone());
        let mut outings = 0;
        for i in 0..cfg.n_users {
            let plan = plan_user(&cfg, i).unwrap();
            let home = plan[0].cell;
            outings += plan.iter().filter(|s| s.cell != home).count();
            let records = generate_user(&cfg, &g, i).unwrap();
            let stays = extract_stays(&records, &icfg).unwrap();
            assert!(stays.iter().all(|s| s.cell == home));
        }
        assert!(outings > 0);

        // A plan consisting only of sub-tau stays yields nothing at all.
        let short: Vec<_> = (0..4)
            .map(|k| PlannedStay {
                cell: CellId::new(k, k),
                start: k as i64 * 3600,
                end: k as i64 * 3600 + 3000,
            })
            .collect();
        let records: Vec<_> = short
            .iter()
            .flat_map(|s| stay_pings("u", s, 600, &g, None))
            .collect();
        assert!(extract_stays(&records, &icfg).unwrap().is_empty());
    }

    #[test]
    fn empty_pool_is_config_error() {
        let g = grid();
        let mut cfg = SynthConfig::for_grid(&g, 1, 1, 1);
        cfg.amenity_cells.cells.clear();
        assert!(generate(&cfg, &g).is_err());
        let mut cfg = SynthConfig::for_grid(&g, 1, 1, 1);
        cfg.n_users = 0;
        assert!(generate(&cfg, &g).is_err());
    }

    #[test]
    fn plans_are_ordered_and_disjoint() {
        let g = grid();
        let cfg = SynthConfig::for_grid(&g, 11, 50, 4);
        for i in 0..cfg.n_users {
            let plan = plan_user(&cfg, i).unwrap();
            assert!(plan.iter().all(|s| s.end > s.start));
            assert!(plan.windows(2).all(|w| w[1].start > w[0].end));
            assert!(plan.windows(2).all(|w| w[1].cell != w[0].cell));
        }
    }
}
