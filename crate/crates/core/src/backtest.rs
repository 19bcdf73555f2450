//! Volatility-scaled time-series momentum returns, portfolio-level
//! rescaling, turnover and transaction costs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::market_data::{EwmMoments, ReturnsFrame, VolSeries, ANNUALISATION, VOL_SPAN};
use crate::market_data::ewm::Decay;
use crate::metrics::annualised_sharpe;
use crate::rules::PositionFrame;
use crate::{CoreError, Result};

/// Cap on the portfolio-level leverage ratio `sigma_tgt / sigma_hat`.
pub const MAX_LEVERAGE: f64 = 20.0;
/// Cost assumptions of the default sweep, in basis points.
pub const DEFAULT_COST_GRID_BPS: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

/// Captured returns `R(i,t)` of one asset; dated by the signal date `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetCaptured {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub captured: Vec<Option<f64>>,
}

/// Equal-weighted portfolio over the assets valid on each date.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortfolioSeries {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    pub n_assets: Vec<usize>,
}

impl PortfolioSeries {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Sub-series with `start <= date < end`.
    pub fn window(&self, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Self {
        let keep = |d: &NaiveDate| start.is_none_or(|s| *d >= s) && end.is_none_or(|e| *d < e);
        let mut out = Self::default();
        for ((d, r), n) in self.dates.iter().zip(&self.returns).zip(&self.n_assets) {
            if keep(d) {
                out.dates.push(*d);
                out.returns.push(*r);
                out.n_assets.push(*n);
            }
        }
        out
    }

    /// `date,portfolio_return,n_assets`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = io_err(path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
        writeln!(w, "date,portfolio_return,n_assets").map_err(&io)?;
        for ((d, r), n) in self.dates.iter().zip(&self.returns).zip(&self.n_assets) {
            writeln!(w, "{d},{r},{n}").map_err(&io)?;
        }
        w.flush().map_err(&io)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReturns {
    pub assets: Vec<AssetCaptured>,
    pub portfolio: PortfolioSeries,
}

impl StrategyReturns {
    /// `date,asset_id,captured_return` for every defined entry.
    pub fn write_asset_csv(&self, path: &Path) -> Result<()> {
        let io = io_err(path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
        writeln!(w, "date,asset_id,captured_return").map_err(&io)?;
        for a in &self.assets {
            for (d, r) in a.dates.iter().zip(&a.captured) {
                if let Some(r) = r {
                    writeln!(w, "{d},{},{r}", a.asset_id).map_err(&io)?;
                }
            }
        }
        w.flush().map_err(&io)
    }
}

/// Turnover `zeta_t` per asset and date.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetTurnover {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub zeta: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnoverFrame {
    pub assets: Vec<AssetTurnover>,
    /// Cross-sectional mean turnover per date.
    pub average: Vec<(NaiveDate, f64)>,
}

impl TurnoverFrame {
    /// Mean of `zeta` over every defined asset-date.
    pub fn mean_turnover(&self) -> f64 {
        let (sum, n) = self
            .assets
            .iter()
            .flat_map(|a| a.zeta.iter().flatten())
            .fold((0.0, 0usize), |(s, n), z| (s + z, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// `date,asset_id,turnover`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = io_err(path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
        writeln!(w, "date,asset_id,turnover").map_err(&io)?;
        for a in &self.assets {
            for (d, z) in a.dates.iter().zip(&a.zeta) {
                if let Some(z) = z {
                    writeln!(w, "{d},{},{z}", a.asset_id).map_err(&io)?;
                }
            }
        }
        w.flush().map_err(&io)
    }

    /// `date,average_turnover`.
    pub fn write_average_csv(&self, path: &Path) -> Result<()> {
        let io = io_err(path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
        writeln!(w, "date,average_turnover").map_err(&io)?;
        for (d, z) in &self.average {
            writeln!(w, "{d},{z}").map_err(&io)?;
        }
        w.flush().map_err(&io)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_alignment(
    positions: &PositionFrame,
    vols: &VolSeries,
    returns: Option<&ReturnsFrame>,
) -> Result<()> {
    if positions.assets.len() != vols.assets.len()
        || returns.is_some_and(|r| r.assets.len() != vols.assets.len())
    {
        return Err(CoreError::Misaligned("asset counts differ".into()));
    }
    for (i, (p, v)) in positions.assets.iter().zip(&vols.assets).enumerate() {
        let r = returns.map(|r| &r.assets[i]);
        let same_id = p.asset_id == v.asset_id && r.is_none_or(|r| r.asset_id == v.asset_id);
        let same_len = p.positions.len() == v.sigma.len() && r.is_none_or(|r| r.next.len() == v.sigma.len());
        if !same_id || !same_len {
            return Err(CoreError::Misaligned(format!("asset `{}`", p.asset_id)));
        }
    }
    Ok(())
}

fn aggregate(assets: &[AssetCaptured]) -> PortfolioSeries {
    let mut by_date: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for a in assets {
        for (d, r) in a.dates.iter().zip(&a.captured) {
            if let Some(r) = r {
                let e = by_date.entry(*d).or_insert((0.0, 0));
                e.0 += r;
                e.1 += 1;
            }
        }
    }
    let mut out = PortfolioSeries::default();
    for (d, (sum, n)) in by_date {
        out.dates.push(d);
        out.returns.push(sum / n as f64);
        out.n_assets.push(n);
    }
    out
}

/// `R(i,t) = X_t (sigma_tgt / sigma_t) r_{t,t+1}` and the equal-weighted
/// portfolio over the `N_t` assets where all three inputs are defined.
pub fn tsmom_returns(
    positions: &PositionFrame,
    returns: &ReturnsFrame,
    vols: &VolSeries,
    target: f64,
) -> Result<StrategyReturns> {
    check_alignment(positions, vols, Some(returns))?;
    let assets: Vec<AssetCaptured> = positions
        .assets
        .iter()
        .zip(&returns.assets)
        .zip(&vols.assets)
        .map(|((p, r), v)| AssetCaptured {
            asset_id: p.asset_id.clone(),
            dates: p.dates.clone(),
            captured: p
                .positions
                .iter()
                .zip(&v.sigma)
                .zip(&r.next)
                .map(|((x, s), next)| match (x, s, next) {
                    (Some(x), Some(s), Some(next)) if *s > 0.0 => Some(x * (target / s) * next),
                    _ => None,
                })
                .collect(),
        })
        .collect();
    let portfolio = aggregate(&assets);
    Ok(StrategyReturns { assets, portfolio })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Causal 60-day-span EWM estimate from returns strictly before `t`.
    #[default]
    Causal,
    /// One factor from the whole-sample volatility. Uses future data.
    ExPost,
}

/// Brings a portfolio series to the annualised `target` volatility.
///
/// In causal mode the first 60 dates are dropped as warm-up and the leverage
/// ratio is capped at [`MAX_LEVERAGE`].
pub fn rescale_to_target(
    portfolio: &PortfolioSeries,
    target: f64,
    mode: RescaleMode,
) -> Result<PortfolioSeries> {
    let n = portfolio.len();
    match mode {
        RescaleMode::Causal => {
            if n <= VOL_SPAN {
                return Err(CoreError::InvalidArgument(format!(
                    "rescaling needs more than {VOL_SPAN} portfolio returns, got {n}"
                )));
            }
            let mut moments = EwmMoments::new(Decay::from_span(VOL_SPAN)?);
            let mut out = PortfolioSeries::default();
            for t in 0..n {
                if t >= VOL_SPAN {
                    let sigma = moments.std() * ANNUALISATION.sqrt();
                    let lev = leverage(target, sigma);
                    out.dates.push(portfolio.dates[t]);
                    out.returns.push(portfolio.returns[t] * lev);
                    out.n_assets.push(portfolio.n_assets[t]);
                }
                moments.push(portfolio.returns[t]);
            }
            Ok(out)
        }
        RescaleMode::ExPost => {
            if n < 2 {
                return Err(CoreError::InvalidArgument("need at least 2 returns".into()));
            }
            let mean = portfolio.returns.iter().sum::<f64>() / n as f64;
            let var = portfolio.returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                / (n - 1) as f64;
            let lev = leverage(target, var.sqrt() * ANNUALISATION.sqrt());
            Ok(PortfolioSeries {
                dates: portfolio.dates.clone(),
                returns: portfolio.returns.iter().map(|r| r * lev).collect(),
                n_assets: portfolio.n_assets.clone(),
            })
        }
    }
}

fn leverage(target: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        (target / sigma).min(MAX_LEVERAGE)
    } else {
        MAX_LEVERAGE
    }
}

/// `zeta_t = sigma_tgt |X_t / sigma_t - X_{t-1} / sigma_{t-1}|`, with the
/// previous term taken as zero on the first valid date of a run.
pub fn turnover(positions: &PositionFrame, vols: &VolSeries, target: f64) -> Result<TurnoverFrame> {
    check_alignment(positions, vols, None)?;
    let assets: Vec<AssetTurnover> = positions
        .assets
        .iter()
        .zip(&vols.assets)
        .map(|(p, v)| {
            let scaled: Vec<Option<f64>> = p
                .positions
                .iter()
                .zip(&v.sigma)
                .map(|(x, s)| match (x, s) {
                    (Some(x), Some(s)) if *s > 0.0 => Some(x / s),
                    _ => None,
                })
                .collect();
            let zeta = (0..scaled.len())
                .map(|t| {
                    let now = scaled[t]?;
                    let prev = if t > 0 { scaled[t - 1].unwrap_or(0.0) } else { 0.0 };
                    Some(target * (now - prev).abs())
                })
                .collect();
            AssetTurnover {
                asset_id: p.asset_id.clone(),
                dates: p.dates.clone(),
                zeta,
            }
        })
        .collect();
    let mut by_date: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for a in &assets {
        for (d, z) in a.dates.iter().zip(&a.zeta) {
            if let Some(z) = z {
                let e = by_date.entry(*d).or_insert((0.0, 0));
                e.0 += z;
                e.1 += 1;
            }
        }
    }
    let average = by_date
        .into_iter()
        .map(|(d, (s, n))| (d, s / n as f64))
        .collect();
    Ok(TurnoverFrame { assets, average })
}

/// Deducts `c * zeta_t` from every captured return and re-aggregates.
pub fn apply_costs(
    strategy: &StrategyReturns,
    turnover: &TurnoverFrame,
    cost: f64,
) -> Result<StrategyReturns> {
    if !(cost >= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "transaction cost must be non-negative, got {cost}"
        )));
    }
    if strategy.assets.len() != turnover.assets.len() {
        return Err(CoreError::Misaligned("asset counts differ".into()));
    }
    let assets: Vec<AssetCaptured> = strategy
        .assets
        .iter()
        .zip(&turnover.assets)
        .map(|(s, z)| {
            if s.asset_id != z.asset_id || s.captured.len() != z.zeta.len() {
                return Err(CoreError::Misaligned(format!("asset `{}`", s.asset_id)));
            }
            let captured = s
                .captured
                .iter()
                .zip(&z.zeta)
                .map(|(r, z)| r.map(|r| r - cost * z.unwrap_or(0.0)))
                .collect();
            Ok(AssetCaptured {
                asset_id: s.asset_id.clone(),
                dates: s.dates.clone(),
                captured,
            })
        })
        .collect::<Result<_>>()?;
    let portfolio = aggregate(&assets);
    Ok(StrategyReturns { assets, portfolio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostPoint {
    pub cost_bps: f64,
    pub sharpe: Option<f64>,
}

/// Ex-cost annualised Sharpe of the portfolio for each cost (in bps).
///
/// `window` restricts the portfolio dates evaluated, `[start, end)`.
pub fn cost_sweep(
    strategy: &StrategyReturns,
    turnover: &TurnoverFrame,
    costs_bps: &[f64],
    window: (Option<NaiveDate>, Option<NaiveDate>),
) -> Result<Vec<CostPoint>> {
    if costs_bps.iter().any(|c| !(*c >= 0.0)) || costs_bps.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoreError::InvalidArgument(
            "costs must be non-negative and ascending".into(),
        ));
    }
    costs_bps
        .iter()
        .map(|&bps| {
            let adjusted = apply_costs(strategy, turnover, bps * 1e-4)?;
            let series = adjusted.portfolio.window(window.0, window.1);
            Ok(CostPoint {
                cost_bps: bps,
                sharpe: annualised_sharpe(&series.returns),
            })
        })
        .collect()
}

/// `cost_bps,sharpe`.
pub fn write_cost_sweep_csv(points: &[CostPoint], path: &Path) -> Result<()> {
    let io = io_err(path);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
    writeln!(w, "cost_bps,sharpe").map_err(&io)?;
    for p in points {
        match p.sharpe {
            Some(s) => writeln!(w, "{},{s}", p.cost_bps),
            None => writeln!(w, "{},", p.cost_bps),
        }
        .map_err(&io)?;
    }
    w.flush().map_err(&io)
}
