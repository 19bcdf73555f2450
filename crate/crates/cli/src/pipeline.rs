//! The commands, as library functions returning in-memory results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use dmn_core::backtest::{
    apply_costs, cost_sweep, rescale_to_target, tsmom_returns, turnover, write_cost_sweep_csv, CostPoint,
    PortfolioSeries, RescaleMode, StrategyReturns, TurnoverFrame, DEFAULT_COST_GRID_BPS,
};
use dmn_core::blocks::{block_boundaries, oos_blocks};
use dmn_core::market_data::{
    load_csv, winsorise_prices, write_features_csv, write_returns_csv, write_vol_csv, AssetSeries, MarketData,
    VOL_TARGET,
};
use dmn_core::metrics::{
    annualised_sharpe, crossval_report, cumulative_returns, read_perf_json, summarise, write_crossval_csv,
    write_crossval_json, write_perf_csv, write_perf_json, CrossValReport, PerfReport, METRIC_NAMES,
};
use dmn_core::rules::{long_only, macd_rule, sgn_returns, PositionFrame};
use dmn_core::synth;
use dmn_learn::walk_forward::{walk_forward, RunManifest};
use dmn_learn::WalkForwardResult;
use serde::Serialize;

use crate::config::{RunConfig, Strategy};
use crate::error::{Classify, CliError, ExitKind};

fn data_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.data.as_deref().ok_or_else(|| anyhow!("--data is required")).other()
}

/// Reads and prepares the price file named in `cfg`, with the number of
/// dropped price cells.
pub fn load_market(cfg: &RunConfig) -> Result<(MarketData, usize), CliError> {
    let path = data_path(cfg)?;
    let loaded = load_csv(path, cfg.schema).data()?;
    let assets = if cfg.winsorise {
        loaded.assets.iter().map(winsorise_prices).collect::<Result<Vec<_>, _>>().data()?
    } else {
        loaded.assets
    };
    Ok((MarketData::build(assets).data()?, loaded.dropped))
}

fn date_span(assets: &[AssetSeries]) -> Option<(NaiveDate, NaiveDate)> {
    let first = assets.iter().filter_map(|a| a.dates().first()).min()?;
    let last = assets.iter().filter_map(|a| a.dates().last()).max()?;
    Some((*first, *last))
}

#[derive(Debug, Clone, Serialize)]
pub struct AssetSummary {
    pub asset_id: String,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub n_prices: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub n_assets: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
    pub dropped_rows: usize,
    pub assets: Vec<AssetSummary>,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .other()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).other()?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .other()
}

/// Writes features, returns and volatilities plus `ingest_summary.json`.
pub fn run_ingest(cfg: &RunConfig) -> Result<IngestSummary, CliError> {
    let (data, dropped) = load_market(cfg)?;
    create_dir(&cfg.out)?;
    write_features_csv(&data.features, &cfg.out.join("features.csv")).other()?;
    write_returns_csv(&data.returns, &cfg.out.join("returns.csv")).other()?;
    write_vol_csv(&data.vols, &cfg.out.join("vol.csv")).other()?;
    let span = date_span(&data.assets);
    let summary = IngestSummary {
        n_assets: data.assets.len(),
        first_date: span.map(|s| s.0),
        last_date: span.map(|s| s.1),
        dropped_rows: dropped,
        assets: data
            .assets
            .iter()
            .map(|a| AssetSummary {
                asset_id: a.asset_id().to_string(),
                first_date: a.dates()[0],
                last_date: *a.dates().last().expect("non-empty series"),
                n_prices: a.len(),
            })
            .collect(),
    };
    write_json(&summary, &cfg.out.join("ingest_summary.json"))?;
    Ok(summary)
}

/// Writes `prices.csv` in the configured layout and `synth_manifest.json`.
pub fn run_synth(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let (assets, manifest) = synth::generate(&cfg.synth).other()?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("prices.csv");
    synth::write_csv(&assets, &path, cfg.schema).other()?;
    write_json(&manifest, &cfg.out.join("synth_manifest.json"))?;
    Ok(path)
}

/// Everything measured on one strategy's positions.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub label: String,
    /// First out-of-sample date; earlier positions are ignored.
    pub start: Option<NaiveDate>,
    pub boundaries: Vec<NaiveDate>,
    pub positions: PositionFrame,
    pub strategy: StrategyReturns,
    pub turnover: TurnoverFrame,
    pub rescaled: PortfolioSeries,
    pub perf_raw: PerfReport,
    pub perf_rescaled: PerfReport,
    pub crossval_raw: CrossValReport,
    pub crossval_rescaled: CrossValReport,
    pub cost_sweep: Vec<CostPoint>,
    pub mean_turnover: f64,
    /// Sharpe after deducting the configured cost.
    pub net_sharpe: Option<f64>,
}

fn block_reports(series: &PortfolioSeries, boundaries: &[NaiveDate]) -> Result<Vec<PerfReport>, CliError> {
    let blocks = if boundaries.is_empty() {
        vec![series.clone()]
    } else {
        oos_blocks(boundaries)
            .iter()
            .map(|b| series.window(Some(b.start), b.end))
            .collect()
    };
    blocks
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| summarise(&s.returns).other())
        .collect()
}

/// Backtests `positions` over the out-of-sample span starting at the first
/// boundary, or over the whole sample when there is none.
pub fn evaluate(
    label: &str,
    positions: &PositionFrame,
    data: &MarketData,
    boundaries: &[NaiveDate],
    cost: f64,
) -> Result<Evaluation, CliError> {
    let start = boundaries.first().copied();
    let positions = match start {
        Some(s) => positions.from_date(s),
        None => positions.clone(),
    };
    let strategy = tsmom_returns(&positions, &data.returns, &data.vols, VOL_TARGET).other()?;
    let turnover = turnover(&positions, &data.vols, VOL_TARGET).other()?;
    let raw = &strategy.portfolio;
    if raw.len() < 2 {
        return Err(anyhow!("{label}: fewer than two portfolio returns to evaluate")).data();
    }
    let rescaled = rescale_to_target(raw, VOL_TARGET, RescaleMode::Causal).data()?;
    let perf_raw = summarise(&raw.returns).other()?;
    let perf_rescaled = summarise(&rescaled.returns).other()?;
    let crossval_raw = crossval_report(&block_reports(raw, boundaries)?).other()?;
    let crossval_rescaled = crossval_report(&block_reports(&rescaled, boundaries)?).other()?;
    let sweep = cost_sweep(&strategy, &turnover, &DEFAULT_COST_GRID_BPS, (None, None)).other()?;
    let net = apply_costs(&strategy, &turnover, cost).other()?;
    Ok(Evaluation {
        label: label.to_string(),
        start,
        boundaries: boundaries.to_vec(),
        mean_turnover: turnover.mean_turnover(),
        net_sharpe: annualised_sharpe(&net.portfolio.returns),
        positions,
        strategy,
        turnover,
        rescaled,
        perf_raw,
        perf_rescaled,
        crossval_raw,
        crossval_rescaled,
        cost_sweep: sweep,
    })
}

/// Recalibration dates for a dataset.
pub fn boundaries(data: &MarketData, block_years: u32) -> Result<Vec<NaiveDate>, CliError> {
    let (first, last) = date_span(&data.assets).ok_or_else(|| anyhow!("no prices")).data()?;
    block_boundaries(first, last, block_years).other()
}

pub fn classical_positions(strategy: Strategy, data: &MarketData, macd_average: bool) -> Result<PositionFrame, CliError> {
    match strategy {
        Strategy::LongOnly => Ok(long_only(&data.vols)),
        Strategy::Sgn => Ok(sgn_returns(&data.returns)),
        Strategy::Macd => macd_rule(&data.assets, macd_average).data(),
        other => Err(anyhow!("{other} is a learned strategy")).other(),
    }
}

#[derive(Debug, Clone)]
pub struct BacktestOutcome {
    pub config: RunConfig,
    pub walk_forward: Option<WalkForwardResult>,
    pub evaluation: Evaluation,
}

/// Positions for the configured strategy, training first when it is learned,
/// and their evaluation. Training failures come back with the failure
/// manifest that should be written.
pub fn backtest(cfg: &RunConfig, data: &MarketData) -> Result<BacktestOutcome, (CliError, Option<RunManifest>)> {
    let plain = |e: CliError| (e, None);
    let (positions, wf, bounds) = match cfg.walk_forward_config() {
        Some(wf_cfg) => {
            let result = walk_forward(data, &wf_cfg).map_err(|e| {
                let manifest = RunManifest::failed(&wf_cfg, &e);
                let err = CliError {
                    kind: ExitKind::Training,
                    error: e.into(),
                };
                (err, Some(manifest))
            })?;
            (result.positions.clone(), Some(result.clone()), result.boundaries.clone())
        }
        None => {
            let positions = classical_positions(cfg.strategy, data, cfg.macd_average).map_err(plain)?;
            (positions, None, boundaries(data, cfg.block_years).map_err(plain)?)
        }
    };
    let evaluation = evaluate(&cfg.label(), &positions, data, &bounds, cfg.cost()).map_err(plain)?;
    Ok(BacktestOutcome {
        config: cfg.clone(),
        walk_forward: wf,
        evaluation,
    })
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    strategy: &'a str,
    config: &'a RunConfig,
    boundaries: &'a [NaiveDate],
    first_oos_date: Option<NaiveDate>,
    mean_turnover: f64,
    sharpe_raw: Option<f64>,
    sharpe_rescaled: Option<f64>,
    cost_bps: f64,
    net_sharpe: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ClassicalManifest<'a> {
    seed: u64,
    strategy: &'a str,
    config: &'a RunConfig,
    boundaries: &'a [NaiveDate],
}

fn write_cumulative(raw: &PortfolioSeries, rescaled: &PortfolioSeries, path: &Path) -> Result<(), CliError> {
    let mut rows: BTreeMap<NaiveDate, [Option<f64>; 2]> = BTreeMap::new();
    for (d, c) in raw.dates.iter().zip(cumulative_returns(&raw.returns)) {
        rows.entry(*d).or_default()[0] = Some(c);
    }
    for (d, c) in rescaled.dates.iter().zip(cumulative_returns(&rescaled.returns)) {
        rows.entry(*d).or_default()[1] = Some(c);
    }
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::from("date,raw,rescaled\n");
    for (d, [a, b]) in rows {
        text.push_str(&format!("{d},{},{}\n", cell(a), cell(b)));
    }
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .other()
}

/// Writes every report of a backtest into `dir`.
pub fn write_backtest(outcome: &BacktestOutcome, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    let e = &outcome.evaluation;
    let cfg = &outcome.config;
    let name = e.label.clone();
    e.positions.write_csv(&dir.join("positions.csv")).other()?;
    e.strategy.write_asset_csv(&dir.join("asset_returns.csv")).other()?;
    e.strategy.portfolio.write_csv(&dir.join("portfolio_returns.csv")).other()?;
    e.rescaled.write_csv(&dir.join("rescaled_returns.csv")).other()?;
    e.turnover.write_csv(&dir.join("turnover.csv")).other()?;
    e.turnover.write_average_csv(&dir.join("turnover_average.csv")).other()?;
    write_cost_sweep_csv(&e.cost_sweep, &dir.join("cost_sweep.csv")).other()?;
    let raw = [(name.clone(), e.perf_raw)];
    let rescaled = [(name.clone(), e.perf_rescaled)];
    write_perf_csv(&raw, &dir.join("perf_raw.csv")).other()?;
    write_perf_json(&raw, &dir.join("perf_raw.json")).other()?;
    write_perf_csv(&rescaled, &dir.join("perf_rescaled.csv")).other()?;
    write_perf_json(&rescaled, &dir.join("perf_rescaled.json")).other()?;
    let cv_raw = [(name.clone(), e.crossval_raw.clone())];
    let cv_rescaled = [(name.clone(), e.crossval_rescaled.clone())];
    write_crossval_csv(&cv_raw, &dir.join("crossval_raw.csv")).other()?;
    write_crossval_json(&cv_raw, &dir.join("crossval_raw.json")).other()?;
    write_crossval_csv(&cv_rescaled, &dir.join("crossval_rescaled.csv")).other()?;
    write_crossval_json(&cv_rescaled, &dir.join("crossval_rescaled.json")).other()?;
    write_cumulative(&e.strategy.portfolio, &e.rescaled, &dir.join("cumulative_returns.csv"))?;
    match (&outcome.walk_forward, cfg.walk_forward_config()) {
        (Some(wf), Some(wf_cfg)) => {
            wf.write(dir, &wf_cfg).other()?;
        }
        _ => write_json(
            &ClassicalManifest {
                seed: cfg.seed,
                strategy: &name,
                config: cfg,
                boundaries: &e.boundaries,
            },
            &dir.join("manifest.json"),
        )?,
    }
    write_json(
        &Summary {
            strategy: &name,
            config: cfg,
            boundaries: &e.boundaries,
            first_oos_date: e.start,
            mean_turnover: e.mean_turnover,
            sharpe_raw: e.perf_raw.sharpe,
            sharpe_rescaled: e.perf_rescaled.sharpe,
            cost_bps: cfg.cost_bps,
            net_sharpe: e.net_sharpe,
        },
        &dir.join("summary.json"),
    )
}

/// Loads, trains if needed, evaluates and writes the reports. On a training
/// failure the failure manifest is written before returning.
pub fn run_backtest(cfg: &RunConfig) -> Result<BacktestOutcome, CliError> {
    let (data, _) = load_market(cfg)?;
    match backtest(cfg, &data) {
        Ok(outcome) => {
            write_backtest(&outcome, &cfg.out)?;
            Ok(outcome)
        }
        Err((err, manifest)) => {
            if let Some(m) = manifest {
                create_dir(&cfg.out)?;
                m.write(&cfg.out.join("manifest.json")).other()?;
            }
            Err(err)
        }
    }
}

fn format_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn table(title: &str, rows: &BTreeMap<String, PerfReport>) -> String {
    let width = rows.keys().map(String::len).max().unwrap_or(0).max(8);
    let mut out = format!("{title}\n{:<width$}", "strategy");
    for name in METRIC_NAMES {
        out.push_str(&format!(" {name:>10}"));
    }
    out.push('\n');
    for (strategy, r) in rows {
        out.push_str(&format!("{strategy:<width$}"));
        for v in r.values() {
            out.push_str(&format!(" {:>10}", format_cell(v)));
        }
        out.push('\n');
    }
    out
}

/// Merges the reports found in `dirs` into raw and rescaled tables.
pub fn run_report(dirs: &[PathBuf]) -> Result<String, CliError> {
    let mut raw = BTreeMap::new();
    let mut rescaled = BTreeMap::new();
    for dir in dirs {
        raw.extend(read_perf_json(&dir.join("perf_raw.json")).other()?);
        rescaled.extend(read_perf_json(&dir.join("perf_rescaled.json")).other()?);
    }
    Ok(format!(
        "{}\n{}",
        table("Raw signal outputs", &raw),
        table("Rescaled to target volatility", &rescaled)
    ))
}
