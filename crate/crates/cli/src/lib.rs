//! Batch pipeline behind the `dmn` binary: ingestion, synthetic data,
//! walk-forward backtests and reports.

mod error;

pub mod config;
pub mod pipeline;

pub use config::{Overrides, RunConfig, Strategy};
pub use error::{Classify, CliError, ExitKind};
