//! Performance statistics and cross-validation summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::market_data::ANNUALISATION;
use crate::{CoreError, Result};

/// Column labels in report order.
pub const METRIC_NAMES: [&str; 9] = [
    "E[Return]",
    "Vol.",
    "Downside Deviation",
    "MDD",
    "Sharpe",
    "Sortino",
    "Calmar",
    "% +ve",
    "AveP/AveL",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrawdownMode {
    /// Wealth `W_t = prod(1 + r)` starting from `W_0 = 1`.
    #[default]
    Compounded,
    /// Cumulative sum of returns starting from zero.
    Additive,
}

/// Annualised statistics of a daily return series. `None` marks n/a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub expected_return: f64,
    pub volatility: f64,
    pub downside_deviation: Option<f64>,
    pub mdd: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub calmar: Option<f64>,
    pub pct_positive: f64,
    pub avg_profit_over_loss: Option<f64>,
    pub n_days: usize,
}

impl PerfReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 9] {
        [
            Some(self.expected_return),
            Some(self.volatility),
            self.downside_deviation,
            Some(self.mdd),
            self.sharpe,
            self.sortino,
            self.calmar,
            Some(self.pct_positive),
            self.avg_profit_over_loss,
        ]
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; `None` below two observations.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

fn ratio(num: f64, den: Option<f64>) -> Option<f64> {
    den.filter(|d| *d > 0.0).map(|d| num / d)
}

/// `mean * 252 / (std * sqrt(252))`, `None` for a flat or too short series.
pub fn annualised_sharpe(returns: &[f64]) -> Option<f64> {
    let std = sample_std(returns)?;
    ratio(mean(returns) * ANNUALISATION, Some(std * ANNUALISATION.sqrt()))
}

pub fn summarise(returns: &[f64]) -> Result<PerfReport> {
    summarise_with(returns, DrawdownMode::Compounded)
}

pub fn summarise_with(returns: &[f64], mode: DrawdownMode) -> Result<PerfReport> {
    if returns.len() < 2 {
        return Err(CoreError::InvalidArgument(format!(
            "performance statistics need at least 2 returns, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(CoreError::InvalidArgument("non-finite return".into()));
    }
    let ann = ANNUALISATION;
    let expected_return = mean(returns) * ann;
    let volatility = sample_std(returns).unwrap_or(0.0) * ann.sqrt();
    let negatives: Vec<f64> = returns.iter().copied().filter(|r| *r < 0.0).collect();
    let positives: Vec<f64> = returns.iter().copied().filter(|r| *r > 0.0).collect();
    let downside_deviation = sample_std(&negatives).map(|s| s * ann.sqrt());
    let mdd = max_drawdown_with(returns, mode)?;
    let avg_profit_over_loss = if positives.is_empty() || negatives.is_empty() {
        None
    } else {
        ratio(mean(&positives), Some(mean(&negatives).abs()))
    };
    Ok(PerfReport {
        expected_return,
        volatility,
        downside_deviation,
        mdd,
        sharpe: ratio(expected_return, Some(volatility)),
        sortino: ratio(expected_return, downside_deviation),
        calmar: ratio(expected_return, Some(mdd)),
        pct_positive: positives.len() as f64 / returns.len() as f64,
        avg_profit_over_loss,
        n_days: returns.len(),
    })
}

pub fn max_drawdown(returns: &[f64]) -> Result<f64> {
    max_drawdown_with(returns, DrawdownMode::Compounded)
}

/// Largest peak-to-trough decline. Compounded mode reports a fraction of
/// the peak; additive mode reports the absolute fall in cumulative return.
pub fn max_drawdown_with(returns: &[f64], mode: DrawdownMode) -> Result<f64> {
    if returns.is_empty() {
        return Err(CoreError::InvalidArgument("drawdown of an empty series".into()));
    }
    let mut worst = 0.0f64;
    match mode {
        DrawdownMode::Compounded => {
            let (mut wealth, mut peak) = (1.0f64, 1.0f64);
            for r in returns {
                wealth *= 1.0 + r;
                peak = peak.max(wealth);
                if peak > 0.0 {
                    worst = worst.max((peak - wealth) / peak);
                }
            }
        }
        DrawdownMode::Additive => {
            let (mut cum, mut peak) = (0.0f64, 0.0f64);
            for r in returns {
                cum += r;
                peak = peak.max(cum);
                worst = worst.max(peak - cum);
            }
        }
    }
    Ok(worst)
}

/// Cumulative compounded wealth, starting after the first return.
pub fn cumulative_returns(returns: &[f64]) -> Vec<f64> {
    returns
        .iter()
        .scan(1.0, |w, r| {
            *w *= 1.0 + r;
            Some(*w - 1.0)
        })
        .collect()
}

/// One metric aggregated across blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValMetric {
    pub metric: String,
    pub mean: Option<f64>,
    /// Half-width of the band, `2 * sample std`.
    pub band: Option<f64>,
    pub n_blocks: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub n_blocks: usize,
    pub metrics: Vec<CrossValMetric>,
}

impl CrossValReport {
    pub fn get(&self, metric: &str) -> Option<&CrossValMetric> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

pub fn crossval_report(blocks: &[PerfReport]) -> Result<CrossValReport> {
    if blocks.is_empty() {
        return Err(CoreError::InvalidArgument("no blocks to aggregate".into()));
    }
    let metrics = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let vals: Vec<f64> = blocks.iter().filter_map(|b| b.values()[i]).collect();
            CrossValMetric {
                metric: name.to_string(),
                mean: (!vals.is_empty()).then(|| mean(&vals)),
                band: sample_std(&vals).map(|s| 2.0 * s),
                n_blocks: vals.len(),
                n_excluded: blocks.len() - vals.len(),
            }
        })
        .collect();
    Ok(CrossValReport {
        n_blocks: blocks.len(),
        metrics,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row per strategy, columns in [`METRIC_NAMES`] order. Blank cells are n/a.
pub fn write_perf_csv(reports: &[(String, PerfReport)], path: &Path) -> Result<()> {
    let io = io_err(path);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
    writeln!(w, "strategy,{}", METRIC_NAMES.join(",")).map_err(&io)?;
    for (name, r) in reports {
        let cells: Vec<String> = r.values().iter().map(|v| fmt_opt(*v)).collect();
        writeln!(w, "{name},{}", cells.join(",")).map_err(&io)?;
    }
    w.flush().map_err(&io)
}

/// JSON object keyed by strategy name.
pub fn write_perf_json(reports: &[(String, PerfReport)], path: &Path) -> Result<()> {
    let map: BTreeMap<&str, &PerfReport> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_perf_json(path: &Path) -> Result<BTreeMap<String, PerfReport>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// `strategy,metric,mean,band,n_blocks,n_excluded`.
pub fn write_crossval_csv(reports: &[(String, CrossValReport)], path: &Path) -> Result<()> {
    let io = io_err(path);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
    writeln!(w, "strategy,metric,mean,band,n_blocks,n_excluded").map_err(&io)?;
    for (name, r) in reports {
        for m in &r.metrics {
            writeln!(
                w,
                "{name},{},{},{},{},{}",
                m.metric,
                fmt_opt(m.mean),
                fmt_opt(m.band),
                m.n_blocks,
                m.n_excluded
            )
            .map_err(&io)?;
        }
    }
    w.flush().map_err(&io)
}

pub fn write_crossval_json(reports: &[(String, CrossValReport)], path: &Path) -> Result<()> {
    let map: BTreeMap<&str, &CrossValReport> =
        reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_positive_returns() {
        let r = summarise(&[0.001; 50]).unwrap();
        assert!(r.volatility.abs() < 1e-12);
        assert_eq!(r.pct_positive, 1.0);
        assert!(r.sortino.is_none());
        assert!(r.avg_profit_over_loss.is_none());
        assert_eq!(r.mdd, 0.0);
    }

    #[test]
    fn alternating_returns() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let r = summarise(&xs).unwrap();
        assert!(r.expected_return.abs() < 1e-12);
        assert_eq!(r.pct_positive, 0.5);
        assert!((r.avg_profit_over_loss.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_crash_halves_wealth() {
        let mut xs = vec![0.0; 20];
        xs[7] = -0.5;
        assert!((max_drawdown(&xs).unwrap() - 0.5).abs() < 1e-15);
        assert!((max_drawdown_with(&xs, DrawdownMode::Additive).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(max_drawdown(&[0.01, 0.02, 0.0, 0.03]).unwrap(), 0.0);
    }

    #[test]
    fn crossval_band() {
        let base = summarise(&[0.01, -0.005, 0.002, -0.001, 0.004]).unwrap();
        let mut a = base;
        let mut b = base;
        a.sharpe = Some(1.0);
        b.sharpe = Some(3.0);
        let cv = crossval_report(&[a, b]).unwrap();
        let s = cv.get("Sharpe").unwrap();
        assert!((s.mean.unwrap() - 2.0).abs() < 1e-12);
        assert!((s.band.unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let same = crossval_report(&[base, base]).unwrap();
        assert!(same.metrics.iter().all(|m| m.band.is_none_or(|w| w.abs() < 1e-12)));
        let single = crossval_report(&[base]).unwrap();
        assert!(single.metrics[0].mean.is_some() && single.metrics[0].band.is_none());
        b.sortino = None;
        let cv = crossval_report(&[a, b]).unwrap();
        let so = cv.get("Sortino").unwrap();
        assert_eq!((so.n_blocks, so.n_excluded), (1, 1));
    }
}
