//! Command-line driver for the spectral-bin coalescence proxy: threaded
//! execution of the fissioned loop, state snapshots, TOML configs and JSON
//! run reports.

pub mod app;
pub mod config;
pub mod error;
pub mod exec;
pub mod report;
pub mod snapshot;
pub mod variant;

pub use config::RunConfig;
pub use error::{AppError, Result};
pub use exec::{fissioned_step, run_variant, RunSettings, StdClock, VariantRun};
pub use variant::Variant;
