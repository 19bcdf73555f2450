//! Market data pipeline, classical trend rules, backtesting and
//! performance statistics for volatility-scaled momentum strategies.

mod error;

pub mod backtest;
pub mod blocks;
pub mod market_data;
pub mod metrics;
pub mod rules;
pub mod synth;

pub use error::{CoreError, Result};
