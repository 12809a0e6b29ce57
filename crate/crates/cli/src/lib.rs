//! Command-line front end: synthetic input generation and the end-to-end
//! scenario run.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use v2g_core::household::write_demand_csv;
use v2g_core::ingest::write_records_csv;
use v2g_core::synth::{generate, SynthConfig};
use v2g_core::time::LocalZone;

pub mod demo;
pub mod run;

/// Usage or configuration problem, including missing or unreadable inputs.
#[derive(Debug)]
pub struct ConfigError(pub String);

/// A simulated trace broke one of the engine's invariants.
#[derive(Debug)]
pub struct InvariantViolation(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violation: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}
impl std::error::Error for InvariantViolation {}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;

/// Maps an error chain onto the documented exit codes.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InvariantViolation>() {
            return EXIT_INVARIANT;
        }
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<v2g_core::Error>() {
            return match e {
                v2g_core::Error::Io(_) => EXIT_FAILURE,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_FAILURE
}

#[derive(Debug, Parser)]
#[command(name = "v2g", version, about = "Mobility-driven vehicle-to-grid potential estimation")]
pub struct Cli {
    /// Worker threads; 0 uses every core. Never changes output bytes.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic location records on the demo grid.
    Synth(SynthArgs),
    /// Write demo planning areas and a household demand curve.
    DemoInputs(DemoArgs),
    /// Run the full pipeline on records, areas and a demand curve.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub users: u32,
    #[arg(long, default_value_t = 7)]
    pub days: u32,
    /// First simulated day, YYYY-MM-DD in the local zone.
    #[arg(long)]
    pub start_date: Option<String>,
    #[arg(long, default_value = "+08:00")]
    pub tz: String,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "demo")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Location records CSV (`user_id,timestamp,lat,lon`).
    #[arg(long)]
    pub records: PathBuf,
    /// Planning areas GeoJSON.
    #[arg(long)]
    pub areas: PathBuf,
    /// Household demand curve CSV (`time_of_day,demand`).
    #[arg(long)]
    pub demand: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,

    /// EV penetration rate.
    #[arg(long, default_value_t = 0.03)]
    pub delta: f64,
    /// Population the records are scaled up to.
    #[arg(long, default_value_t = 5.5e6)]
    pub n_pop: f64,

    /// Battery capacity, kWh.
    #[arg(long, default_value_t = 25.0)]
    pub c_max: f64,
    /// Range on a full battery, km.
    #[arg(long, default_value_t = 135.0)]
    pub l_max: f64,
    #[arg(long, default_value_t = 6.6)]
    pub p_charge: f64,
    #[arg(long, default_value_t = 6.6)]
    pub p_discharge: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c_thr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c_init: f64,
    /// SOC at which charging inside the PV window stops.
    #[arg(long, default_value_t = 1.0)]
    pub pv_charge_target: f64,
    #[arg(long, default_value = "09:00")]
    pub pv_start: String,
    #[arg(long, default_value = "17:00")]
    pub pv_end: String,

    /// Minimum stay, minutes.
    #[arg(long, default_value_t = 60)]
    pub tau: i64,
    /// Consecutive active days a user needs to be kept.
    #[arg(long, default_value_t = 5)]
    pub min_days: u32,
    /// Grid cell edge, metres.
    #[arg(long, default_value_t = 250.0)]
    pub cell_size: f64,
    /// Demand profile step, minutes.
    #[arg(long, default_value_t = 15)]
    pub time_step: u32,
    #[arg(long, default_value = "+08:00")]
    pub tz: String,
    /// Restrict or extend the simulated days (YYYY-MM-DD, both required).
    #[arg(long)]
    pub start_date: Option<String>,
    #[arg(long)]
    pub end_date: Option<String>,

    #[arg(long, default_value_t = 30)]
    pub days_in_month: u32,
    /// PV panel efficiency.
    #[arg(long, default_value_t = 0.2)]
    pub eta_pv: f64,
    /// Fraction of ground area covered by panels.
    #[arg(long, default_value_t = 0.25)]
    pub a_pv: f64,
    /// Solar irradiance, W/m².
    #[arg(long, default_value_t = 400.0)]
    pub irradiance: f64,
    /// Coverage histogram bin width (ratio units).
    #[arg(long, default_value_t = 0.05)]
    pub bin_width: f64,
    /// Also write stays.csv and events.csv.
    #[arg(long)]
    pub emit_events: bool,
}

impl RunArgs {
    /// Arguments with every default, for the given inputs.
    pub fn with_inputs(records: PathBuf, areas: PathBuf, demand: PathBuf, out_dir: PathBuf) -> Self {
        let mut argv = vec!["v2g".into(), "run".into()];
        for (flag, path) in [
            ("--records", records),
            ("--areas", areas),
            ("--demand", demand),
            ("--out-dir", out_dir),
        ] {
            argv.push(flag.into());
            argv.push(path.into_os_string());
        }
        match Cli::parse_from(argv).command {
            Command::Run(args) => args,
            _ => unreachable!(),
        }
    }
}

fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let zone: LocalZone = args.tz.parse().map_err(|e| ConfigError(format!("--tz: {e}")))?;
    let grid = demo::demo_grid();
    let mut cfg = SynthConfig::for_grid(&grid, args.seed, args.users, args.days);
    cfg.zone = zone;
    if let Some(d) = &args.start_date {
        let date = chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d")
            .map_err(|e| ConfigError(format!("--start-date {d:?}: {e}")))?;
        cfg.start_day = zone.day_of_date(date);
    }
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    let records = generate(&cfg, &grid)?;
    let mut out = open_output(args.out.as_ref())?;
    write_records_csv(&mut out, &records)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_demo_inputs(args: &DemoArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let areas = demo::demo_areas(args.seed);
    let features = areas
        .iter()
        .map(|a| v2g_core::geo::area_feature(a, Default::default()))
        .collect();
    let doc = v2g_core::geo::feature_collection(features);
    let path = args.out_dir.join("areas.geojson");
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    let path = args.out_dir.join("demand.csv");
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_demand_csv(BufWriter::new(f), &demo::demo_demand_curve())?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<run::RunOutcome> {
    run::execute(args)
}

/// Runs a parsed command line on a pool of `cli.jobs` threads.
pub fn dispatch(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("building thread pool")?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::DemoInputs(a) => cmd_demo_inputs(a),
        Command::Run(a) => {
            let outcome = cmd_run(a)?;
            for w in &outcome.manifest.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "wrote {} files to {}",
                outcome.manifest.outputs.len() + 1,
                a.out_dir.display()
            );
            Ok(())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_vehicle_table() {
        let a = RunArgs::with_inputs("r".into(), "a".into(), "d".into(), "o".into());
        assert_eq!((a.c_max, a.l_max, a.p_charge, a.p_discharge), (25.0, 135.0, 6.6, 6.6));
        assert_eq!((a.c_thr, a.c_init, a.delta), (0.5, 0.5, 0.03));
        assert_eq!((a.pv_start.as_str(), a.pv_end.as_str()), ("09:00", "17:00"));
    }

    #[test]
    fn exit_codes() {
        let e: anyhow::Error = ConfigError("x".into()).into();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let e: anyhow::Error = InvariantViolation("x".into()).into();
        assert_eq!(exit_code(&e.context("while running")), EXIT_INVARIANT);
        let e: anyhow::Error = v2g_core::Error::InvalidConfig("x".into()).into();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_FAILURE);
    }
}
