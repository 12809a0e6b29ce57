//! Night-time household consumption baseline and the comparison between
//! V2G supply and household demand per area.

use std::io::{Read, Write};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::PvWindow;
use crate::error::{invalid_input, Error, Result};
use crate::geo::PlanningArea;
use crate::time::{parse_time_of_day, SECONDS_PER_DAY};

/// Uniformly spaced system demand samples covering one day. Sample `i`
/// stands for the interval `[i * step, (i + 1) * step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandCurve {
    step: u32,
    samples: Vec<f64>,
}

impl DemandCurve {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(invalid_input("demand curve needs at least 2 samples"));
        }
        if SECONDS_PER_DAY as usize % n != 0 {
            return Err(invalid_input(format!("{n} samples do not evenly divide 24 h")));
        }
        if samples.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid_input("demand samples must be finite and non-negative"));
        }
        Ok(Self {
            step: (SECONDS_PER_DAY as usize / n) as u32,
            samples,
        })
    }

    /// Builds a curve from `(seconds after midnight, value)` pairs, which
    /// must start at 00:00 and be uniformly spaced over the day.
    pub fn from_timed(points: &[(u32, f64)]) -> Result<Self> {
        let mut points = points.to_vec();
        points.sort_by_key(|p| p.0);
        let curve = Self::new(points.iter().map(|p| p.1).collect())?;
        for (i, &(t, _)) in points.iter().enumerate() {
            if t != i as u32 * curve.step {
                return Err(invalid_input(format!(
                    "demand sample at {t}s breaks the uniform {}s spacing",
                    curve.step
                )));
            }
        }
        Ok(curve)
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Reads `time_of_day,demand` CSV (`HH:MM`, number).
pub fn read_demand_csv<R: Read>(reader: R) -> Result<DemandCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let time = row
            .get(0)
            .ok_or_else(|| invalid_input("demand row without time_of_day"))?;
        let value: f64 = row
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| invalid_input(format!("bad demand value at {time}")))?;
        points.push((parse_time_of_day(time)?, value));
    }
    DemandCurve::from_timed(&points)
}

pub fn write_demand_csv<W: Write>(w: W, curve: &DemandCurve) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["time_of_day", "demand"])?;
    for (i, v) in curve.samples.iter().enumerate() {
        let t = i as u32 * curve.step;
        wtr.write_record([crate::time::format_time_of_day(t), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Share of daily demand falling outside the PV window. Samples straddling
/// a window boundary are split in proportion to their overlap.
pub fn night_fraction(curve: &DemandCurve, window: &PvWindow) -> Result<f64> {
    let total: f64 = curve.samples.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedFraction("demand curve is all zero".into()));
    }
    let step = curve.step as f64;
    let (w0, w1) = (window.start as f64, window.end as f64);
    let day: f64 = curve
        .samples
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let lo = i as f64 * step;
            let hi = lo + step;
            let overlap = (hi.min(w1) - lo.max(w0)).max(0.0);
            v * overlap / step
        })
        .sum();
    Ok(((total - day) / total).clamp(0.0, 1.0))
}

/// Night-time household energy of an area for one day, or `None` when the
/// area lacks household data.
pub fn household_night_energy(
    area: &PlanningArea,
    days_in_month: u32,
    night_fraction: f64,
) -> Option<f64> {
    let households = area.households?;
    let monthly = area.monthly_kwh_per_household?;
    Some(monthly * households / days_in_month as f64 * night_fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub pearson_r: f64,
    pub p_value: f64,
    pub ols_slope: f64,
    pub ols_intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Pearson correlation (two-sided t-test p-value, n - 2 degrees of
/// freedom) and the OLS fit `y = slope * x + intercept`.
pub fn regression(x: &[f64], y: &[f64]) -> Result<RegressionSummary> {
    let n = x.len();
    if n != y.len() {
        return Err(invalid_input("x and y differ in length"));
    }
    if n < 3 {
        return Err(invalid_input(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= f64::EPSILON * x.iter().map(|v| v * v).sum::<f64>() {
        return Err(Error::DegenerateRegressor(
            "household energy has zero variance across areas".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if syy == 0.0 {
        // Constant response: the fit is exact but correlation is undefined.
        return Ok(RegressionSummary {
            pearson_r: 0.0,
            p_value: 1.0,
            ols_slope: slope,
            ols_intercept: intercept,
            r_squared: 0.0,
            n_points: n,
        });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - (slope * xi + intercept)).powi(2))
        .sum();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    let df = nf - 2.0;
    let p_value = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(RegressionSummary {
        pearson_r: r,
        p_value,
        ols_slope: slope,
        ols_intercept: intercept,
        r_squared,
        n_points: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub area_id: String,
    pub e_ev_kwh: f64,
    pub e_hh_kwh: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub histogram: Vec<HistogramBin>,
    /// `Err` carries the reason statistics were withheld.
    pub regression: std::result::Result<RegressionSummary, String>,
    /// Areas dropped for zero household energy.
    pub excluded: Vec<String>,
}

pub fn histogram(values: &[f64], bin_width: f64) -> Vec<HistogramBin> {
    let Some(max) = values.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let n_bins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; n_bins];
    for v in values {
        counts[((v / bin_width).floor() as usize).min(n_bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: i as f64 * bin_width,
            high: (i + 1) as f64 * bin_width,
            count,
        })
        .collect()
}

/// Per-area coverage `e_ev / e_hh`, its histogram and the regression of
/// `e_ev` on `e_hh`. Input triples are `(area_id, e_ev, e_hh)` for areas
/// where both are known; areas with zero household energy are excluded.
pub fn coverage_and_stats(pairs: &[(String, f64, f64)], bin_width: f64) -> Result<CoverageReport> {
    if !(bin_width > 0.0) {
        return Err(invalid_input("histogram bin width must be positive"));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (area_id, e_ev, e_hh) in pairs {
        if *e_hh > 0.0 {
            rows.push(CoverageRow {
                area_id: area_id.clone(),
                e_ev_kwh: *e_ev,
                e_hh_kwh: *e_hh,
                ratio: e_ev / e_hh,
            });
        } else {
            excluded.push(area_id.clone());
        }
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let x: Vec<f64> = rows.iter().map(|r| r.e_hh_kwh).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.e_ev_kwh).collect();
    let regression = match regression(&x, &y) {
        Ok(summary) => Ok(summary),
        Err(Error::InvalidInput(msg)) | Err(Error::DegenerateRegressor(msg)) => Err(msg),
        Err(other) => return Err(other),
    };
    Ok(CoverageReport {
        histogram: histogram(&ratios, bin_width),
        rows,
        regression,
        excluded,
    })
}

pub fn write_coverage_csv<W: Write>(w: W, rows: &[CoverageRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["area_id", "e_ev_kwh", "e_hh_kwh", "ratio"])?;
    for r in rows {
        wtr.write_record([
            r.area_id.clone(),
            r.e_ev_kwh.to_string(),
            r.e_hh_kwh.to_string(),
            r.ratio.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(w: W, bins: &[HistogramBin]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["bin_low", "bin_high", "count"])?;
    for b in bins {
        wtr.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `regression.txt`: one `key=value` per line.
pub fn write_regression_txt<W: Write>(
    mut w: W,
    regression: &std::result::Result<RegressionSummary, String>,
    n_paired: usize,
) -> Result<()> {
    match regression {
        Ok(s) => write!(
            w,
            "r={}\np={}\nslope={}\nintercept={}\nr_squared={}\nn={}\n",
            s.pearson_r, s.p_value, s.ols_slope, s.ols_intercept, s.r_squared, s.n_points
        )?,
        Err(reason) => write!(w, "withheld={reason}\nn={n_paired}\n")?,
    }
    Ok(())
}
