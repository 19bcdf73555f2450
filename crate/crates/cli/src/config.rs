//! Run configuration: defaults, an optional TOML file, and flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dmn_core::market_data::CsvSchema;
use dmn_core::synth::SynthConfig;
use dmn_learn::trainer::{SearchSpace, TrainConfig};
use dmn_learn::{Architecture, LossKind, Objective, WalkForwardConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Classify};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LongOnly,
    Sgn,
    Macd,
    Linear,
    Mlp,
    Wavenet,
    Lstm,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Self::LongOnly,
        Self::Sgn,
        Self::Macd,
        Self::Linear,
        Self::Mlp,
        Self::Wavenet,
        Self::Lstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LongOnly => "long_only",
            Self::Sgn => "sgn",
            Self::Macd => "macd",
            Self::Linear => "linear",
            Self::Mlp => "mlp",
            Self::Wavenet => "wavenet",
            Self::Lstm => "lstm",
        }
    }

    /// Network behind a learned strategy.
    pub fn architecture(self) -> Option<Architecture> {
        match self {
            Self::Linear => Some(Architecture::Linear),
            Self::Mlp => Some(Architecture::Mlp),
            Self::Wavenet => Some(Architecture::WaveNet),
            Self::Lstm => Some(Architecture::Lstm),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Training knobs that may be tightened for quick runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub search_iters: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub trajectory_len: Option<usize>,
    pub space: Option<SearchSpace>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<CsvSchema>,
    pub strategy: Option<Strategy>,
    pub loss: Option<LossKind>,
    pub cost_bps: Option<f64>,
    pub block_years: Option<u32>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub winsorise: Option<bool>,
    pub macd_average: Option<bool>,
    pub train: TrainOverrides,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))
            .other()?;
        toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
            .other()
    }
}

/// Command-line flags; any flag given wins over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Price file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Price file layout: wide or long.
    #[arg(long)]
    pub schema: Option<CsvSchema>,
    /// long_only, sgn, macd, linear, mlp, wavenet or lstm.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// mse, binary, returns, sharpe or sharpe_cost (learned strategies only).
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Transaction cost in basis points.
    #[arg(long)]
    pub cost_bps: Option<f64>,
    /// Years between recalibrations.
    #[arg(long)]
    pub block_years: Option<u32>,
    /// Seed for synthetic data and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threads for random-search candidates.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Winsorise prices before computing features.
    #[arg(long)]
    pub winsorise: bool,
    /// Average the MACD indicators instead of summing them.
    #[arg(long)]
    pub macd_average: bool,
    /// Training epochs per candidate.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Random-search candidates per block.
    #[arg(long)]
    pub search_iters: Option<usize>,
    /// Synthetic assets to generate.
    #[arg(long)]
    pub n_assets: Option<usize>,
    /// Synthetic trading days to generate.
    #[arg(long)]
    pub n_days: Option<usize>,
    /// Share of synthetic assets with trending drift.
    #[arg(long)]
    pub trend_fraction: Option<f64>,
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: CsvSchema,
    pub strategy: Strategy,
    pub loss: Option<LossKind>,
    pub cost_bps: f64,
    pub block_years: u32,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub winsorise: bool,
    pub macd_average: bool,
    pub train: TrainOverrides,
    pub synth: SynthConfig,
}

pub const DEFAULT_SEED: u64 = 7;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            schema: CsvSchema::Wide,
            strategy: Strategy::Sgn,
            loss: None,
            cost_bps: 0.0,
            block_years: 5,
            seed: DEFAULT_SEED,
            workers: 1,
            out: PathBuf::from("out"),
            winsorise: false,
            macd_average: false,
            train: TrainOverrides::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::read(p)?,
            None => FileConfig::default(),
        };
        let d = Self::default();
        let mut synth = file.synth.unwrap_or(d.synth);
        let seed = flags.seed.or(file.seed).unwrap_or(d.seed);
        synth.seed = seed;
        synth.n_assets = flags.n_assets.unwrap_or(synth.n_assets);
        synth.n_days = flags.n_days.unwrap_or(synth.n_days);
        synth.trend_fraction = flags.trend_fraction.unwrap_or(synth.trend_fraction);
        let mut train = file.train;
        train.max_epochs = flags.max_epochs.or(train.max_epochs);
        train.patience = flags.patience.or(train.patience);
        train.search_iters = flags.search_iters.or(train.search_iters);
        let cfg = Self {
            data: flags.data.clone().or(file.data),
            schema: flags.schema.or(file.schema).unwrap_or(d.schema),
            strategy: flags.strategy.or(file.strategy).unwrap_or(d.strategy),
            loss: flags.loss.or(file.loss),
            cost_bps: flags.cost_bps.or(file.cost_bps).unwrap_or(d.cost_bps),
            block_years: flags.block_years.or(file.block_years).unwrap_or(d.block_years),
            seed,
            workers: flags.workers.or(file.workers).unwrap_or(d.workers),
            out: flags.out.clone().or(file.out).unwrap_or(d.out),
            winsorise: flags.winsorise || file.winsorise.unwrap_or(false),
            macd_average: flags.macd_average || file.macd_average.unwrap_or(false),
            train,
            synth,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(anyhow::anyhow!(msg)).other();
        if self.loss.is_some() && self.strategy.architecture().is_none() {
            return fail(format!("--loss applies only to learned strategies, not {}", self.strategy));
        }
        if !(self.cost_bps >= 0.0) {
            return fail(format!("cost must be non-negative, got {} bps", self.cost_bps));
        }
        if self.block_years == 0 || self.workers == 0 {
            return fail("block years and workers must be positive".into());
        }
        if let Some(wf) = self.walk_forward_config() {
            wf.train.validate().map_err(anyhow::Error::from).other()?;
        }
        Ok(())
    }

    /// Loss of a learned strategy, Sharpe by default.
    pub fn loss_kind(&self) -> Option<LossKind> {
        self.strategy.architecture().map(|_| self.loss.unwrap_or(LossKind::Sharpe))
    }

    pub fn cost(&self) -> f64 {
        self.cost_bps * 1e-4
    }

    pub fn walk_forward_config(&self) -> Option<WalkForwardConfig> {
        let arch = self.strategy.architecture()?;
        let kind = self.loss_kind()?;
        let cost = if kind == LossKind::SharpeCost { self.cost() } else { 0.0 };
        let mut train = TrainConfig::new(arch, Objective { kind, cost }, self.seed);
        let o = &self.train;
        train.max_epochs = o.max_epochs.unwrap_or(train.max_epochs);
        train.patience = o.patience.unwrap_or(train.patience);
        train.search_iters = o.search_iters.unwrap_or(train.search_iters);
        train.validation_fraction = o.validation_fraction.unwrap_or(train.validation_fraction);
        train.trajectory_len = o.trajectory_len.unwrap_or(train.trajectory_len);
        if let Some(space) = &o.space {
            train.space = space.clone();
        }
        train.workers = self.workers;
        Some(WalkForwardConfig {
            train,
            block_years: self.block_years,
        })
    }

    /// Strategy name used as the report key.
    pub fn label(&self) -> String {
        match self.loss_kind() {
            Some(LossKind::SharpeCost) => format!("{}_sharpe_cost_{}bps", self.strategy, self.cost_bps),
            Some(kind) => format!("{}_{kind}", self.strategy),
            None => self.strategy.name().to_string(),
        }
    }
}
