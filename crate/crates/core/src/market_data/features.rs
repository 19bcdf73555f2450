use super::ewm::{ewm_std, winsorise};
use super::{
    AssetFeatures, AssetReturns, AssetSeries, AssetVol, FeatureMatrix, ReturnsFrame, VolSeries,
    ANNUALISATION, N_FEATURES, RETURN_HORIZONS, VOL_SPAN,
};
use crate::rules::{macd_indicator, MACD_SCALES};
use crate::{CoreError, Result};

/// Simple returns of one asset on its own calendar.
pub fn compute_returns(asset: &AssetSeries) -> AssetReturns {
    let p = asset.prices();
    let n = p.len();
    let daily = (0..n)
        .map(|t| (t >= 1).then(|| p[t] / p[t - 1] - 1.0))
        .collect();
    let next = (0..n)
        .map(|t| (t + 1 < n).then(|| p[t + 1] / p[t] - 1.0))
        .collect();
    let horizons = RETURN_HORIZONS.map(|k| {
        (0..n)
            .map(|t| (t >= k).then(|| p[t] / p[t - k] - 1.0))
            .collect()
    });
    AssetReturns {
        asset_id: asset.asset_id().to_string(),
        dates: asset.dates().to_vec(),
        daily,
        next,
        horizons,
    }
}

pub fn returns_frame(assets: &[AssetSeries]) -> ReturnsFrame {
    ReturnsFrame {
        assets: assets.iter().map(compute_returns).collect(),
    }
}

/// Annualised 60-day-span EWM volatility of daily returns.
///
/// `sigma[t]` uses returns up to and including `r_{t-1,t}` and is emitted
/// once 60 returns are available. A zero estimate is masked and the first
/// such date recorded as `untradeable_from`.
pub fn exante_vol(returns: &ReturnsFrame) -> Result<VolSeries> {
    let assets = returns
        .assets
        .iter()
        .map(|asset| {
            let n = asset.dates.len();
            let mut sigma = vec![None; n];
            let mut untradeable_from = None;
            if n > VOL_SPAN {
                let daily: Vec<f64> = asset.daily[1..]
                    .iter()
                    .map(|r| r.expect("daily return defined after the first date"))
                    .collect();
                let stds = ewm_std(&daily, VOL_SPAN)?;
                for (i, s) in stds.into_iter().enumerate() {
                    let t = i + 1;
                    if t < VOL_SPAN {
                        continue;
                    }
                    match s {
                        Some(s) if s > 0.0 => sigma[t] = Some(s * ANNUALISATION.sqrt()),
                        Some(_) => {
                            untradeable_from.get_or_insert(asset.dates[t]);
                        }
                        None => {}
                    }
                }
            }
            Ok(AssetVol {
                asset_id: asset.asset_id.clone(),
                dates: asset.dates.clone(),
                sigma,
                untradeable_from,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VolSeries { assets })
}

/// Feature matrix straight from prices.
pub fn build_features(assets: &[AssetSeries]) -> Result<FeatureMatrix> {
    let returns = returns_frame(assets);
    let vols = exante_vol(&returns)?;
    build_features_from(assets, &returns, &vols)
}

/// Columns 0..5: `r_{t-k,t} / (sigma_daily * sqrt(k))` for
/// `k in {1, 21, 63, 126, 252}` with `sigma_daily = sigma_t / sqrt(252)`.
/// Columns 5..8: the MACD indicators for the three standard scale pairs.
pub fn build_features_from(
    assets: &[AssetSeries],
    returns: &ReturnsFrame,
    vols: &VolSeries,
) -> Result<FeatureMatrix> {
    if assets.len() != returns.assets.len() || assets.len() != vols.assets.len() {
        return Err(CoreError::Misaligned("asset counts differ".into()));
    }
    let mut out = Vec::with_capacity(assets.len());
    for ((asset, ret), vol) in assets.iter().zip(&returns.assets).zip(&vols.assets) {
        if ret.asset_id != asset.asset_id() || vol.asset_id != asset.asset_id() {
            return Err(CoreError::Misaligned(format!(
                "asset order differs at `{}`",
                asset.asset_id()
            )));
        }
        let macd: Vec<Vec<Option<f64>>> = MACD_SCALES
            .iter()
            .map(|&(s, l)| macd_indicator(asset, s, l))
            .collect::<Result<_>>()?;
        let n = asset.len();
        let mut rows = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for t in 0..n {
            let mut row = [f64::NAN; N_FEATURES];
            if let Some(sigma) = vol.sigma[t] {
                let daily_sigma = sigma / ANNUALISATION.sqrt();
                for (j, &k) in RETURN_HORIZONS.iter().enumerate() {
                    if let Some(r) = ret.horizons[j][t] {
                        row[j] = r / (daily_sigma * (k as f64).sqrt());
                    }
                }
            }
            for (j, series) in macd.iter().enumerate() {
                if let Some(y) = series[t] {
                    row[5 + j] = y;
                }
            }
            valid.push(row.iter().all(|v| v.is_finite()));
            rows.push(row);
        }
        out.push(AssetFeatures {
            asset_id: asset.asset_id().to_string(),
            dates: asset.dates().to_vec(),
            rows,
            valid,
        });
    }
    Ok(FeatureMatrix { assets: out })
}

/// Winsorises daily returns and rebuilds the price path from the first price.
pub fn winsorise_prices(asset: &AssetSeries) -> Result<AssetSeries> {
    let p = asset.prices();
    if p.len() < 2 {
        return Ok(asset.clone());
    }
    let daily: Vec<f64> = p.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let clipped = winsorise(&daily);
    let mut prices = Vec::with_capacity(p.len());
    prices.push(p[0]);
    for r in clipped {
        let last = *prices.last().unwrap();
        prices.push(last * (1.0 + r));
    }
    AssetSeries::new(asset.asset_id(), asset.dates().to_vec(), prices)
}

/// Every derived series for a universe of assets, index-aligned per asset.
#[derive(Debug, Clone)]
pub struct MarketData {
    pub assets: Vec<AssetSeries>,
    pub returns: ReturnsFrame,
    pub vols: VolSeries,
    pub features: FeatureMatrix,
}

impl MarketData {
    pub fn build(assets: Vec<AssetSeries>) -> Result<Self> {
        let returns = returns_frame(&assets);
        let vols = exante_vol(&returns)?;
        let features = build_features_from(&assets, &returns, &vols)?;
        Ok(Self {
            assets,
            returns,
            vols,
            features,
        })
    }
}
