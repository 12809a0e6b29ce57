//! Mobility-driven estimation of vehicle-to-grid energy supply and peak
//! charging demand per planning area.
//!
//! The pipeline runs location records through grid binning and stay
//! extraction ([`ingest`]), simulates each vehicle's battery day by day
//! ([`engine`]), and aggregates the resulting charge events per area
//! ([`aggregation`]). [`household`] provides the night-time household
//! consumption baseline the supply is compared against, and [`synth`]
//! generates reproducible synthetic users.

pub mod aggregation;
pub mod engine;
pub mod error;
pub mod geo;
pub mod household;
pub mod ingest;
pub mod synth;
pub mod time;

pub use error::{Error, Result};
