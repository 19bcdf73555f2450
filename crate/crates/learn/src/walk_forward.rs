//! Expanding-window recalibration with strictly out-of-sample predictions.

use std::path::Path;

use chrono::NaiveDate;
use dmn_core::blocks::{block_boundaries, oos_blocks, Block};
use dmn_core::market_data::MarketData;
use dmn_core::rules::{AssetPositions, PositionFrame};
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::objectives::LossKind;
use crate::panel::{split, Panel};
use crate::trainer::{random_search, Candidate, HyperParams, SearchResult, TrainConfig};
use crate::{LearnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardConfig {
    pub train: TrainConfig,
    pub block_years: u32,
}

#[derive(Debug, Clone)]
pub struct BlockFit {
    pub index: usize,
    pub block: Block,
    pub seed: u64,
    pub n_train_units: usize,
    pub n_validation_units: usize,
    pub search: SearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedBlock {
    pub index: usize,
    pub block: Block,
    pub reason: String,
}

/// Raw model outputs `Z` per asset and date; `None` outside predicted blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPredictions {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub z: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct WalkForwardResult {
    pub boundaries: Vec<NaiveDate>,
    pub fits: Vec<BlockFit>,
    pub skipped: Vec<SkippedBlock>,
    pub predictions: Vec<AssetPredictions>,
    pub positions: PositionFrame,
}

fn date_span(panel: &Panel) -> Result<(NaiveDate, NaiveDate)> {
    let first = panel.assets.iter().filter_map(|a| a.dates.first()).min();
    let last = panel.assets.iter().filter_map(|a| a.dates.last()).max();
    match (first, last) {
        (Some(f), Some(l)) => Ok((*f, *l)),
        _ => Err(LearnError::EmptyDataset("no dated observations".into())),
    }
}

/// Seed of the search at recalibration `k`.
pub fn block_seed(seed: u64, k: usize) -> u64 {
    seed ^ ((k as u64) << 32)
}

pub fn walk_forward(data: &MarketData, config: &WalkForwardConfig) -> Result<WalkForwardResult> {
    walk_forward_panel(&Panel::from_market(data)?, config)
}

/// Fits at every boundary on samples whose targets precede it and predicts
/// only the following block.
pub fn walk_forward_panel(panel: &Panel, config: &WalkForwardConfig) -> Result<WalkForwardResult> {
    config.train.validate()?;
    let (first, last) = date_span(panel)?;
    let boundaries = block_boundaries(first, last, config.block_years)?;
    if boundaries.is_empty() {
        return Err(LearnError::InvalidArgument(format!(
            "data from {first} to {last} does not span two {}-year blocks",
            config.block_years
        )));
    }
    let mut predictions: Vec<AssetPredictions> = panel
        .assets
        .iter()
        .map(|a| AssetPredictions {
            asset_id: a.asset_id.clone(),
            dates: a.dates.clone(),
            z: vec![None; a.len()],
        })
        .collect();
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (index, block) in oos_blocks(&boundaries).into_iter().enumerate() {
        let data_split = split(
            panel,
            config.train.architecture,
            Some(block.start),
            config.train.validation_fraction,
            config.train.trajectory_len,
        )?;
        if data_split.train.is_empty() || data_split.validation.is_empty() {
            let reason = format!(
                "{} training and {} validation units",
                data_split.train.len(),
                data_split.validation.len()
            );
            log::warn!("skipping block starting {}: {reason}", block.start);
            skipped.push(SkippedBlock { index, block, reason });
            continue;
        }
        let seed = block_seed(config.train.seed, index);
        let block_config = TrainConfig {
            seed,
            ..config.train.clone()
        };
        log::info!(
            "block {index} from {}: {} training units, {} candidates",
            block.start,
            data_split.train.len(),
            block_config.search_iters
        );
        let search = random_search(panel, &data_split, &block_config)?;
        predict_block(&search.best.model, panel, &block, &mut predictions)?;
        fits.push(BlockFit {
            index,
            block,
            seed,
            n_train_units: data_split.train.len(),
            n_validation_units: data_split.validation.len(),
            search,
        });
    }
    let kind = config.train.objective.kind;
    let positions = to_positions(&predictions, kind);
    Ok(WalkForwardResult {
        boundaries,
        fits,
        skipped,
        predictions,
        positions,
    })
}

/// Writes outputs of `model` for every date of `block`. The LSTM restarts
/// from a zero state at the block start and after any invalid row.
pub fn predict_block(model: &Model, panel: &Panel, block: &Block, out: &mut [AssetPredictions]) -> Result<()> {
    let arch = model.spec.architecture;
    for (asset, pred) in panel.assets.iter().zip(out.iter_mut()) {
        let idx: Vec<usize> = (0..asset.len()).filter(|&t| block.contains(asset.dates[t])).collect();
        if arch.is_recurrent() {
            let mut k = 0;
            while k < idx.len() {
                if !asset.valid[idx[k]] {
                    k += 1;
                    continue;
                }
                let start = k;
                while k < idx.len() && asset.valid[idx[k]] {
                    k += 1;
                }
                let rows: Vec<_> = idx[start..k].iter().map(|&t| asset.rows[t]).collect();
                for (&t, z) in idx[start..k].iter().zip(model.predict_sequence(&rows)?) {
                    pred.z[t] = Some(z);
                }
            }
        } else {
            let window = arch.window();
            let ends: Vec<usize> = idx.iter().copied().filter(|&t| asset.window_valid(t, window)).collect();
            let mut inputs = Vec::with_capacity(ends.len() * model.spec.input_width());
            for &t in &ends {
                for row in &asset.rows[t + 1 - window..=t] {
                    inputs.extend_from_slice(row);
                }
            }
            for (&t, z) in ends.iter().zip(model.predict_windows(inputs, ends.len())?) {
                pred.z[t] = Some(z);
            }
        }
    }
    Ok(())
}

pub fn to_positions(predictions: &[AssetPredictions], kind: LossKind) -> PositionFrame {
    PositionFrame {
        assets: predictions
            .iter()
            .map(|p| AssetPositions {
                asset_id: p.asset_id.clone(),
                dates: p.dates.clone(),
                positions: p.z.iter().map(|z| z.map(|z| kind.position(z))).collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockManifest {
    pub index: usize,
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
    pub seed: u64,
    pub hyper: HyperParams,
    pub best_candidate: usize,
    pub val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub n_train_units: usize,
    pub n_validation_units: usize,
    pub checkpoint: String,
    pub candidates: Vec<Candidate>,
}

/// JSON record of a walk-forward run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: WalkForwardConfig,
    pub boundaries: Vec<NaiveDate>,
    pub blocks: Vec<BlockManifest>,
    pub skipped: Vec<SkippedBlock>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn failed(config: &WalkForwardConfig, error: &LearnError) -> Self {
        Self {
            seed: config.train.seed,
            config: config.clone(),
            boundaries: Vec::new(),
            blocks: Vec::new(),
            skipped: Vec::new(),
            error: Some(error.to_string()),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| LearnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl WalkForwardResult {
    /// Writes `manifest.json` and `checkpoints/block_<k>.json` into `dir`.
    pub fn write(&self, dir: &Path, config: &WalkForwardConfig) -> Result<RunManifest> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| LearnError::Io { path, source }
        };
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).map_err(io(&ckpt_dir))?;
        let mut blocks = Vec::with_capacity(self.fits.len());
        for fit in &self.fits {
            let name = format!("checkpoints/block_{:02}.json", fit.index);
            fit.search.best.model.save(&dir.join(&name))?;
            blocks.push(BlockManifest {
                index: fit.index,
                start: fit.block.start,
                end: fit.block.end,
                seed: fit.seed,
                hyper: fit.search.hyper,
                best_candidate: fit.search.best_index,
                val_loss: fit.search.best.best_val_loss,
                best_epoch: fit.search.best.best_epoch,
                epochs_run: fit.search.best.epochs_run,
                n_train_units: fit.n_train_units,
                n_validation_units: fit.n_validation_units,
                checkpoint: name,
                candidates: fit.search.candidates.clone(),
            });
        }
        let manifest = RunManifest {
            seed: config.train.seed,
            config: config.clone(),
            boundaries: self.boundaries.clone(),
            blocks,
            skipped: self.skipped.clone(),
            error: None,
        };
        manifest.write(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}
