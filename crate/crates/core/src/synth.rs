//! Seeded synthetic futures-like price panels.
//!
//! Trend assets follow a drift whose sign flips at random regime changes
//! (geometric durations), on top of Gaussian noise whose scale also switches
//! between a calm and a turbulent level. Noise assets share the volatility
//! process but carry no drift, so they serve as null controls.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::market_data::{AssetSeries, ANNUALISATION};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_assets: usize,
    pub n_days: usize,
    /// Share of assets generated with a trending drift; the rest are noise.
    pub trend_fraction: f64,
    pub seed: u64,
    pub start: NaiveDate,
    /// Mean length of a drift regime in trading days.
    pub mean_regime_days: f64,
    /// Annualised drift-to-volatility ratio inside a regime.
    pub drift_sharpe: f64,
    /// Range of base daily volatilities, drawn uniformly per asset.
    pub daily_vol_low: f64,
    pub daily_vol_high: f64,
    /// Multipliers of the two volatility states.
    pub calm_vol: f64,
    pub turbulent_vol: f64,
    /// Mean length of a volatility state in trading days.
    pub mean_vol_regime_days: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_assets: 10,
            n_days: 2520,
            trend_fraction: 0.8,
            seed: 7,
            start: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
            mean_regime_days: 400.0,
            drift_sharpe: 1.2,
            daily_vol_low: 0.006,
            daily_vol_high: 0.02,
            calm_vol: 0.8,
            turbulent_vol: 1.6,
            mean_vol_regime_days: 250.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Trend,
    Noise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthAsset {
    pub asset_id: String,
    pub kind: AssetKind,
    pub base_daily_vol: f64,
    pub regime_switches: usize,
}

/// Sidecar describing how a dataset was generated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub generator: String,
    pub config: SynthConfig,
    pub assets: Vec<SynthAsset>,
}

/// `n` consecutive weekdays starting at `start` (rolled forward off weekends).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<(Vec<AssetSeries>, SynthManifest)> {
    if config.n_assets == 0 || config.n_days < 2 {
        return Err(CoreError::InvalidArgument(
            "need at least one asset and two days".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.trend_fraction) {
        return Err(CoreError::InvalidArgument("trend_fraction must lie in [0, 1]".into()));
    }
    if config.mean_regime_days < 1.0 || config.mean_vol_regime_days < 1.0 {
        return Err(CoreError::InvalidArgument("regime lengths must be >= 1 day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dates = business_days(config.start, config.n_days);
    let n_trend = (config.n_assets as f64 * config.trend_fraction).round() as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let flip = 1.0 / config.mean_regime_days;
    let vol_flip = 1.0 / config.mean_vol_regime_days;

    let mut assets = Vec::with_capacity(config.n_assets);
    let mut meta = Vec::with_capacity(config.n_assets);
    for i in 0..config.n_assets {
        let kind = if i < n_trend { AssetKind::Trend } else { AssetKind::Noise };
        let asset_id = match kind {
            AssetKind::Trend => format!("TREND{i:02}"),
            AssetKind::Noise => format!("NOISE{i:02}"),
        };
        let base = rng.random_range(config.daily_vol_low..=config.daily_vol_high);
        let drift = match kind {
            AssetKind::Trend => config.drift_sharpe * base / ANNUALISATION.sqrt(),
            AssetKind::Noise => 0.0,
        };
        let mut direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut turbulent = rng.random_bool(0.5);
        let mut switches = 0;
        let mut prices = Vec::with_capacity(config.n_days);
        let mut price = 100.0;
        prices.push(price);
        for _ in 1..config.n_days {
            if rng.random_bool(flip) {
                direction = -direction;
                switches += 1;
            }
            if rng.random_bool(vol_flip) {
                turbulent = !turbulent;
            }
            let scale = if turbulent { config.turbulent_vol } else { config.calm_vol };
            let r = (direction * drift + base * scale * normal.sample(&mut rng)).max(-0.5);
            price *= 1.0 + r;
            prices.push(price);
        }
        assets.push(AssetSeries::new(asset_id.clone(), dates.clone(), prices)?);
        meta.push(SynthAsset {
            asset_id,
            kind,
            base_daily_vol: base,
            regime_switches: switches,
        });
    }
    let manifest = SynthManifest {
        generator: "regime-switching drift with two-state volatility".into(),
        config: config.clone(),
        assets: meta,
    };
    Ok((assets, manifest))
}

/// Writes assets sharing one calendar as `date,<asset1>,...`.
pub fn write_wide_csv(assets: &[AssetSeries], path: &std::path::Path) -> Result<()> {
    write_csv(assets, path, crate::market_data::CsvSchema::Wide)
}

pub fn write_csv(
    assets: &[AssetSeries],
    path: &std::path::Path,
    schema: crate::market_data::CsvSchema,
) -> Result<()> {
    use std::collections::BTreeMap;
    use std::io::Write;
    let io = |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    match schema {
        crate::market_data::CsvSchema::Long => {
            writeln!(w, "date,asset_id,price").map_err(io)?;
            for a in assets {
                for (d, p) in a.dates().iter().zip(a.prices()) {
                    writeln!(w, "{d},{},{p}", a.asset_id()).map_err(io)?;
                }
            }
        }
        crate::market_data::CsvSchema::Wide => {
            let mut table: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
            for (j, a) in assets.iter().enumerate() {
                for (d, p) in a.dates().iter().zip(a.prices()) {
                    table.entry(*d).or_insert_with(|| vec![None; assets.len()])[j] = Some(*p);
                }
            }
            write!(w, "date").map_err(io)?;
            for a in assets {
                write!(w, ",{}", a.asset_id()).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
            for (d, row) in table {
                write!(w, "{d}").map_err(io)?;
                for p in row {
                    match p {
                        Some(p) => write!(w, ",{p}"),
                        None => write!(w, ","),
                    }
                    .map_err(io)?;
                }
                writeln!(w).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
