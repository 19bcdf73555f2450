//! Benchmark momentum signals: long only, sign of the trailing annual
//! return, and the volatility-normalised MACD rule with its position-sizing
//! curve.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::market_data::ewm::{ewm_mean, Decay};
use crate::market_data::{AssetSeries, ReturnsFrame, VolSeries};
use crate::{CoreError, Result};

/// `(short, long)` time-scale pairs of the composite MACD signal.
pub const MACD_SCALES: [(usize, usize); 3] = [(8, 24), (16, 48), (32, 96)];
/// Trailing price window of the first normalisation.
pub const PRICE_STD_WINDOW: usize = 63;
/// Trailing window of the second normalisation.
pub const SIGNAL_STD_WINDOW: usize = 252;
/// Look-back of the sign rule.
pub const SGN_LOOKBACK: usize = 252;

/// Positions `X_t` in `[-1, 1]` per asset and date; `None` is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPositions {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub positions: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionFrame {
    pub assets: Vec<AssetPositions>,
}

impl PositionFrame {
    pub fn iter_valid(&self) -> impl Iterator<Item = f64> + '_ {
        self.assets
            .iter()
            .flat_map(|a| a.positions.iter().flatten().copied())
    }

    /// Masks every position dated before `start`.
    pub fn from_date(&self, start: NaiveDate) -> Self {
        let assets = self
            .assets
            .iter()
            .map(|a| AssetPositions {
                asset_id: a.asset_id.clone(),
                dates: a.dates.clone(),
                positions: a
                    .dates
                    .iter()
                    .zip(&a.positions)
                    .map(|(d, p)| if *d >= start { *p } else { None })
                    .collect(),
            })
            .collect();
        Self { assets }
    }

    /// `date,asset_id,position,valid`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| CoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "date,asset_id,position,valid").map_err(io)?;
        for a in &self.assets {
            for (d, p) in a.dates.iter().zip(&a.positions) {
                match p {
                    Some(x) => writeln!(w, "{d},{},{x},1", a.asset_id),
                    None => writeln!(w, "{d},{},,0", a.asset_id),
                }
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// `X_t = 1` wherever the asset has a volatility estimate.
pub fn long_only(vols: &VolSeries) -> PositionFrame {
    let assets = vols
        .assets
        .iter()
        .map(|v| AssetPositions {
            asset_id: v.asset_id.clone(),
            dates: v.dates.clone(),
            positions: v.sigma.iter().map(|s| s.map(|_| 1.0)).collect(),
        })
        .collect();
    PositionFrame { assets }
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `X_t = sgn(r_{t-252,t})`.
pub fn sgn_returns(returns: &ReturnsFrame) -> PositionFrame {
    let assets = returns
        .assets
        .iter()
        .map(|r| AssetPositions {
            asset_id: r.asset_id.clone(),
            dates: r.dates.clone(),
            positions: r
                .horizon(SGN_LOOKBACK)
                .expect("annual horizon computed")
                .iter()
                .map(|x| x.map(sgn))
                .collect(),
        })
        .collect();
    PositionFrame { assets }
}

/// Half-life of the EWM price average with time-scale `s`:
/// `ln(0.5) / ln(1 - 1/s)`.
pub fn macd_half_life(s: usize) -> f64 {
    0.5_f64.ln() / (1.0 - 1.0 / s as f64).ln()
}

fn sample_std(window: &[f64]) -> f64 {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let ss: f64 = window.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Volatility-normalised MACD trend estimate `Y_t(S, L)`.
///
/// `q_t = (m_S - m_L) / std(p over the last 63 obs)` and
/// `Y_t = q_t / std(q over the last 252 obs)`, with plain sample standard
/// deviations over windows that include `t`. Dates with a zero denominator
/// or too little history are `None`.
pub fn macd_indicator(asset: &AssetSeries, short: usize, long: usize) -> Result<Vec<Option<f64>>> {
    if short < 2 || long <= short {
        return Err(CoreError::InvalidArgument(format!(
            "MACD needs long > short >= 2, got ({short}, {long})"
        )));
    }
    let p = asset.prices();
    let n = p.len();
    let m_short = ewm_mean(p, Decay::from_half_life(macd_half_life(short))?);
    let m_long = ewm_mean(p, Decay::from_half_life(macd_half_life(long))?);

    let q: Vec<Option<f64>> = (0..n)
        .map(|t| {
            let (a, b) = (m_short[t]?, m_long[t]?);
            if t + 1 < PRICE_STD_WINDOW {
                return None;
            }
            let sd = sample_std(&p[t + 1 - PRICE_STD_WINDOW..=t]);
            (sd > 0.0).then(|| (a - b) / sd)
        })
        .collect();

    let mut out = vec![None; n];
    let mut buf = Vec::with_capacity(SIGNAL_STD_WINDOW);
    for t in (SIGNAL_STD_WINDOW - 1)..n {
        buf.clear();
        buf.extend(q[t + 1 - SIGNAL_STD_WINDOW..=t].iter().map_while(|x| *x));
        if buf.len() < SIGNAL_STD_WINDOW {
            continue;
        }
        let sd = sample_std(&buf);
        if sd > 0.0 {
            out[t] = Some(buf[SIGNAL_STD_WINDOW - 1] / sd);
        }
    }
    Ok(out)
}

/// Position-sizing curve `y exp(-y^2/4) / 0.89`, maximal at `|y| = sqrt(2)`.
pub fn phi(y: f64) -> f64 {
    y * (-y * y / 4.0).exp() / 0.89
}

/// Combines the three MACD indicators: `X_t = phi(sum_k Y_t(S_k, L_k))`,
/// clamped to `[-1, 1]`. With `average` the sum is divided by 3.
pub fn macd_rule(assets: &[AssetSeries], average: bool) -> Result<PositionFrame> {
    let assets = assets
        .iter()
        .map(|asset| {
            let parts: Vec<Vec<Option<f64>>> = MACD_SCALES
                .iter()
                .map(|&(s, l)| macd_indicator(asset, s, l))
                .collect::<Result<_>>()?;
            let positions = (0..asset.len())
                .map(|t| {
                    let total = parts.iter().map(|y| y[t]).sum::<Option<f64>>()?;
                    let combined = if average { total / 3.0 } else { total };
                    Some(combined_position(combined))
                })
                .collect();
            Ok(AssetPositions {
                asset_id: asset.asset_id().to_string(),
                dates: asset.dates().to_vec(),
                positions,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PositionFrame { assets })
}

/// `phi` applied to a combined trend estimate, clamped to the signal domain.
pub fn combined_position(y: f64) -> f64 {
    phi(y).clamp(-1.0, 1.0)
}
