//! Price ingestion and the derived per-asset series: returns, ex-ante
//! volatility and the 8-column model input.

mod csv_io;
pub mod ewm;
mod features;

use chrono::NaiveDate;
use serde::Serialize;

use crate::{CoreError, Result};

pub use csv_io::{load_csv, write_features_csv, write_returns_csv, write_vol_csv, CsvSchema, Loaded};
pub use ewm::{ewm_std, winsorise, Decay, EwmMoments};
pub use features::{
    build_features, build_features_from, compute_returns, exante_vol, winsorise_prices,
    MarketData,
};

/// Trading days per year.
pub const ANNUALISATION: f64 = 252.0;
/// Span of the ex-ante volatility estimator.
pub const VOL_SPAN: usize = 60;
/// Annualised volatility target.
pub const VOL_TARGET: f64 = 0.15;
/// Look-back horizons of the normalised-return features.
pub const RETURN_HORIZONS: [usize; 5] = [1, 21, 63, 126, 252];
/// Number of model input columns.
pub const N_FEATURES: usize = 8;

/// One instrument's dated price history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetSeries {
    asset_id: String,
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
}

impl AssetSeries {
    /// Validates strictly increasing dates and positive prices.
    pub fn new(asset_id: impl Into<String>, dates: Vec<NaiveDate>, prices: Vec<f64>) -> Result<Self> {
        let asset_id = asset_id.into();
        if dates.len() != prices.len() {
            return Err(CoreError::InvalidSeries(
                asset_id,
                format!("{} dates but {} prices", dates.len(), prices.len()),
            ));
        }
        if dates.is_empty() {
            return Err(CoreError::InvalidSeries(asset_id, "no usable prices".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(CoreError::InvalidSeries(
                asset_id,
                format!("dates not strictly increasing at {}", w[1]),
            ));
        }
        if let Some(p) = prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(CoreError::InvalidSeries(asset_id, format!("non-positive price {p}")));
        }
        Ok(Self {
            asset_id,
            dates,
            prices,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Same dates, every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.asset_id.clone(),
            self.dates.clone(),
            self.prices.iter().map(|p| p * factor).collect(),
        )
    }
}

/// Returns of one asset on its own calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetReturns {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    /// `r_{t-1,t}` stored at `t`.
    pub daily: Vec<Option<f64>>,
    /// `r_{t,t+1}` stored at `t`; the quantity a position held at `t` earns.
    pub next: Vec<Option<f64>>,
    /// `r_{t-k,t}` for each of [`RETURN_HORIZONS`].
    pub horizons: [Vec<Option<f64>>; 5],
}

impl AssetReturns {
    pub fn horizon(&self, k: usize) -> Option<&[Option<f64>]> {
        RETURN_HORIZONS
            .iter()
            .position(|&h| h == k)
            .map(|i| self.horizons[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsFrame {
    pub assets: Vec<AssetReturns>,
}

/// Annualised ex-ante volatility of one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetVol {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    /// `None` during warm-up and wherever the estimate is zero.
    pub sigma: Vec<Option<f64>>,
    /// First date the estimate came out exactly zero.
    pub untradeable_from: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolSeries {
    pub assets: Vec<AssetVol>,
}

/// Model inputs of one asset. Invalid rows hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetFeatures {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<[f64; N_FEATURES]>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub assets: Vec<AssetFeatures>,
}
