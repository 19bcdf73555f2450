//! Minibatch training with early stopping and random hyperparameter search.

use dmn_autodiff::{DropoutMode, Graph, ParamStore, ParamVars, Tensor, Var};
use dmn_core::market_data::N_FEATURES;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{feedforward, lstm_sequence, Architecture, LstmMasks, Model, ModelSpec, TRAJECTORY_LEN};
use crate::objectives::{l1_penalty, task_loss, Objective};
use crate::optim::{clip_gradients, Adam};
use crate::panel::{previous_window, targets, Panel, Split, Unit};
use crate::{LearnError, Result};

/// Candidate values for each hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub dropout_rate: Vec<f64>,
    pub hidden_size: Vec<usize>,
    pub minibatch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_grad_norm: Vec<f64>,
    /// L1 weight, linear model only.
    pub l1_alpha: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            dropout_rate: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            hidden_size: vec![5, 10, 20, 40, 80],
            minibatch_size: vec![256, 512, 1024, 2048],
            learning_rate: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0],
            max_grad_norm: vec![1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1],
            l1_alpha: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let empty = self.dropout_rate.is_empty()
            || self.hidden_size.is_empty()
            || self.minibatch_size.is_empty()
            || self.learning_rate.is_empty()
            || self.max_grad_norm.is_empty()
            || self.l1_alpha.is_empty();
        if empty {
            return Err(LearnError::InvalidArgument("every search grid needs a value".into()));
        }
        Ok(())
    }

    /// Uniform draw per dimension. Every dimension is drawn for every
    /// architecture so the stream of draws does not depend on it.
    pub fn sample<R: Rng + ?Sized>(&self, architecture: Architecture, rng: &mut R) -> HyperParams {
        let pick = |n: usize, rng: &mut R| rng.random_range(0..n);
        let dropout_rate = self.dropout_rate[pick(self.dropout_rate.len(), rng)];
        let hidden_size = self.hidden_size[pick(self.hidden_size.len(), rng)];
        let minibatch_size = self.minibatch_size[pick(self.minibatch_size.len(), rng)];
        let learning_rate = self.learning_rate[pick(self.learning_rate.len(), rng)];
        let max_grad_norm = self.max_grad_norm[pick(self.max_grad_norm.len(), rng)];
        let l1_alpha = self.l1_alpha[pick(self.l1_alpha.len(), rng)];
        let linear = architecture == Architecture::Linear;
        HyperParams {
            dropout_rate: if linear { 0.0 } else { dropout_rate },
            hidden_size: if linear { 1 } else { hidden_size },
            minibatch_size,
            learning_rate,
            max_grad_norm,
            l1_alpha: linear.then_some(l1_alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub dropout_rate: f64,
    pub hidden_size: usize,
    /// Samples per minibatch; LSTM batches hold `ceil(size / 63)` trajectories.
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub l1_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub objective: Objective,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub search_iters: usize,
    pub seed: u64,
    pub workers: usize,
    pub trajectory_len: usize,
    pub space: SearchSpace,
}

impl TrainConfig {
    pub fn new(architecture: Architecture, objective: Objective, seed: u64) -> Self {
        Self {
            architecture,
            objective,
            max_epochs: 100,
            patience: 25,
            validation_fraction: 0.1,
            search_iters: 50,
            seed,
            workers: 1,
            trajectory_len: TRAJECTORY_LEN,
            space: SearchSpace::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience >= self.max_epochs {
            return Err(LearnError::InvalidArgument(format!(
                "need 0 < patience < max_epochs, got patience {} and {} epochs",
                self.patience, self.max_epochs
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(LearnError::InvalidArgument("validation fraction outside (0, 1)".into()));
        }
        if self.search_iters == 0 || self.workers == 0 || self.trajectory_len == 0 {
            return Err(LearnError::InvalidArgument(
                "search iterations, workers and trajectory length must be positive".into(),
            ));
        }
        self.space.validate()
    }

    pub fn steps(&self) -> usize {
        if self.architecture.is_recurrent() {
            self.trajectory_len
        } else {
            1
        }
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub best_val_loss: f64,
    /// Zero-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

/// Builds the objective on a batch of units and returns it with the raw
/// model outputs `[units, steps]`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    spec: &ModelSpec,
    g: &mut Graph,
    vars: &ParamVars,
    panel: &Panel,
    units: &[Unit],
    steps: usize,
    objective: &Objective,
    l1_alpha: Option<f64>,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Var)> {
    let mut t = targets(panel, units, steps);
    let (z, z_prev) = if spec.architecture.is_recurrent() {
        let n = units.len();
        let xs: Vec<Var> = (0..steps)
            .map(|s| {
                let mut rows = Vec::with_capacity(n * N_FEATURES);
                for u in units {
                    rows.extend_from_slice(&panel.assets[u.asset].rows[u.t + s]);
                }
                Ok(g.constant(Tensor::matrix(n, N_FEATURES, rows)?))
            })
            .collect::<Result<_>>()?;
        let masks = LstmMasks::sample(spec, n, mode, rng);
        let out = lstm_sequence(spec, g, vars, &xs, None, &masks)?;
        let z = g.concat_cols(&out.outputs)?;
        let z_prev = if objective.needs_previous() {
            let mut parts = vec![g.constant(Tensor::zeros(&[n, 1]))];
            parts.extend_from_slice(&out.outputs[..steps - 1]);
            Some(g.concat_cols(&parts)?)
        } else {
            None
        };
        (z, z_prev)
    } else {
        let window = spec.architecture.window();
        let ends: Vec<(usize, usize)> = units.iter().map(|u| (u.asset, u.t)).collect();
        let x = g.constant(Tensor::matrix(units.len(), spec.input_width(), panel.windows(&ends, window))?);
        let mut rng_prev = rng.clone();
        let z = feedforward(spec, g, vars, x, mode, rng)?;
        let z_prev = if objective.needs_previous() {
            let mut prev_ends = Vec::with_capacity(units.len());
            for (k, u) in units.iter().enumerate() {
                match previous_window(panel, *u, window) {
                    Some(scale) => {
                        t.prev_scale[k] = scale;
                        prev_ends.push((u.asset, u.t - 1));
                    }
                    None => prev_ends.push((u.asset, u.t)),
                }
            }
            let xp = g.constant(Tensor::matrix(units.len(), spec.input_width(), panel.windows(&prev_ends, window))?);
            Some(feedforward(spec, g, vars, xp, mode, &mut rng_prev)?)
        } else {
            None
        };
        (z, z_prev)
    };
    let mut loss = task_loss(g, z, z_prev, &t, objective)?;
    if let (Some(alpha), Architecture::Linear) = (l1_alpha, spec.architecture) {
        if alpha > 0.0 {
            let w = *vars
                .get("w")
                .ok_or_else(|| dmn_autodiff::AutodiffError::UnknownParam("w".into()))?;
            let pen = l1_penalty(g, w, alpha)?;
            loss = g.add(loss, pen)?;
        }
    }
    Ok((loss, z))
}

/// Loss value and parameter gradients on a batch in the given mode.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradients(
    model: &Model,
    panel: &Panel,
    units: &[Unit],
    steps: usize,
    objective: &Objective,
    l1_alpha: Option<f64>,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamStore)> {
    let mut g = Graph::new();
    let vars = model.params.register(&mut g);
    let (loss, _) = batch_loss(&model.spec, &mut g, &vars, panel, units, steps, objective, l1_alpha, mode, rng)?;
    let value = g.value(loss).values()[0];
    g.backward(loss)?;
    Ok((value, model.params.gradients(&g, &vars)))
}

/// Task loss without the L1 term, inference mode, over all `units`.
pub fn evaluate(model: &Model, panel: &Panel, units: &[Unit], steps: usize, objective: &Objective) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.params.register(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (loss, _) = batch_loss(
        &model.spec,
        &mut g,
        &vars,
        panel,
        units,
        steps,
        objective,
        None,
        DropoutMode::Inference,
        &mut rng,
    )?;
    Ok(g.value(loss).values()[0])
}

/// Trains one model with Adam, keeping the checkpoint of the best
/// validation epoch and stopping after `patience` epochs without progress.
pub fn train_model(panel: &Panel, split: &Split, hp: &HyperParams, config: &TrainConfig, seed: u64) -> Result<FitResult> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(LearnError::EmptyDataset(format!(
            "{} training and {} validation units",
            split.train.len(),
            split.validation.len()
        )));
    }
    let steps = split.steps;
    let objective = &config.objective;
    let spec = ModelSpec::new(config.architecture, hp.hidden_size, objective.kind.head(), hp.dropout_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(spec, &mut rng);
    let mut adam = Adam::new(&model.params, hp.learning_rate);
    let per_batch = hp.minibatch_size.div_ceil(steps).max(1);
    let mode = if spec.architecture.is_recurrent() {
        DropoutMode::Variational
    } else {
        DropoutMode::PerStep
    };

    let mut order = split.train.clone();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(per_batch) {
            let (loss, mut grads) =
                loss_and_gradients(&model, panel, batch, steps, objective, hp.l1_alpha, mode, &mut rng)?;
            if !loss.is_finite() {
                return Err(LearnError::Diverged(format!("non-finite training loss at epoch {epoch}")));
            }
            if !grads.all_finite() {
                return Err(LearnError::Diverged(format!("non-finite gradient at epoch {epoch}")));
            }
            clip_gradients(&mut grads, hp.max_grad_norm)?;
            adam.step(&mut model.params, &grads)?;
            total += loss;
            batches += 1;
        }
        if !model.params.all_finite() {
            return Err(LearnError::Diverged(format!("non-finite parameters at epoch {epoch}")));
        }
        let val = evaluate(&model, panel, &split.validation, steps, objective)?;
        if !val.is_finite() {
            return Err(LearnError::Diverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        train_curve.push(total / batches as f64);
        val_curve.push(val);
        if val < best.0 {
            best = (val, model.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    Ok(FitResult {
        model: best.1,
        best_val_loss: best.0,
        best_epoch: best.2,
        epochs_run: val_curve.len(),
        train_curve,
        val_curve,
    })
}

/// Summary of one random-search draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub seed: u64,
    pub hyper: HyperParams,
    pub val_loss: Option<f64>,
    pub epochs_run: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: FitResult,
    pub hyper: HyperParams,
    pub best_index: usize,
    pub candidates: Vec<Candidate>,
}

/// `search_iters` draws trained independently (in parallel over `workers`
/// threads); the lowest validation loss wins, ties to the earliest draw.
/// Diverged candidates are discarded.
pub fn random_search(panel: &Panel, split: &Split, config: &TrainConfig) -> Result<SearchResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draws: Vec<(usize, u64, HyperParams)> = (0..config.search_iters)
        .map(|i| (i, config.seed ^ i as u64, config.space.sample(config.architecture, &mut rng)))
        .collect();
    let run = |&(i, seed, hp): &(usize, u64, HyperParams)| {
        let fit = train_model(panel, split, &hp, config, seed);
        match &fit {
            Ok(f) => log::debug!("candidate {i}: val loss {:.6} after {} epochs", f.best_val_loss, f.epochs_run),
            Err(e) => log::debug!("candidate {i} discarded: {e}"),
        }
        (i, seed, hp, fit)
    };
    let results: Vec<(usize, u64, HyperParams, Result<FitResult>)> = if config.workers == 1 {
        draws.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| LearnError::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| draws.par_iter().map(run).collect())
    };

    let mut candidates = Vec::with_capacity(results.len());
    let mut best: Option<(usize, FitResult, HyperParams)> = None;
    let mut errors = Vec::new();
    for (index, seed, hyper, fit) in results {
        match fit {
            Ok(f) => {
                candidates.push(Candidate {
                    index,
                    seed,
                    hyper,
                    val_loss: Some(f.best_val_loss),
                    epochs_run: Some(f.epochs_run),
                    error: None,
                });
                if best.as_ref().is_none_or(|(_, b, _)| f.best_val_loss < b.best_val_loss) {
                    best = Some((index, f, hyper));
                }
            }
            Err(e @ LearnError::Diverged(_)) => {
                errors.push(format!("candidate {index}: {e}"));
                candidates.push(Candidate {
                    index,
                    seed,
                    hyper,
                    val_loss: None,
                    epochs_run: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let (best_index, best, hyper) = best.ok_or(LearnError::AllDiverged(errors))?;
    Ok(SearchResult {
        best,
        hyper,
        best_index,
        candidates,
    })
}
