//! Per-asset training panel: feature windows, LSTM trajectories and
//! chronological train/validation splits.

use chrono::NaiveDate;
use dmn_core::market_data::{MarketData, ANNUALISATION, N_FEATURES};

use crate::model::Architecture;
use crate::{LearnError, Result};

/// Inputs and targets of one asset, index-aligned by date.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelAsset {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<[f64; N_FEATURES]>,
    pub valid: Vec<bool>,
    /// `r_{t,t+1}`.
    pub next_return: Vec<Option<f64>>,
    /// Annualised ex-ante volatility.
    pub sigma: Vec<Option<f64>>,
    /// Length of the run of valid rows ending at each index.
    run: Vec<usize>,
}

impl PanelAsset {
    pub fn new(
        asset_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        rows: Vec<[f64; N_FEATURES]>,
        valid: Vec<bool>,
        next_return: Vec<Option<f64>>,
        sigma: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = dates.len();
        if [rows.len(), valid.len(), next_return.len(), sigma.len()].iter().any(|l| *l != n) {
            return Err(LearnError::InvalidArgument("panel columns differ in length".into()));
        }
        let mut run = Vec::with_capacity(n);
        let mut len = 0;
        for &v in &valid {
            len = if v { len + 1 } else { 0 };
            run.push(len);
        }
        Ok(Self {
            asset_id: asset_id.into(),
            dates,
            rows,
            valid,
            next_return,
            sigma,
            run,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// `window` consecutive valid rows end at `t`.
    pub fn window_valid(&self, t: usize, window: usize) -> bool {
        self.run[t] >= window
    }

    fn usable_sigma(&self, t: usize) -> Option<f64> {
        self.sigma[t].filter(|s| *s > 0.0)
    }

    /// A training target exists at `t` with a complete input window.
    pub fn is_sample(&self, t: usize, window: usize) -> bool {
        self.window_valid(t, window) && self.next_return[t].is_some() && self.usable_sigma(t).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub assets: Vec<PanelAsset>,
}

impl Panel {
    pub fn from_market(data: &MarketData) -> Result<Self> {
        let assets = data
            .features
            .assets
            .iter()
            .zip(&data.returns.assets)
            .zip(&data.vols.assets)
            .map(|((f, r), v)| {
                PanelAsset::new(
                    f.asset_id.clone(),
                    f.dates.clone(),
                    f.rows.clone(),
                    f.valid.clone(),
                    r.next.clone(),
                    v.sigma.clone(),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { assets })
    }

    /// Flattened `[n, window * 8]` inputs for windows ending at each index.
    pub fn windows(&self, ends: &[(usize, usize)], window: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(ends.len() * window * N_FEATURES);
        for &(a, t) in ends {
            let asset = &self.assets[a];
            for row in &asset.rows[t + 1 - window..=t] {
                out.extend_from_slice(row);
            }
        }
        out
    }
}

/// Per-sample quantities the objectives need, laid out as `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub rows: usize,
    pub cols: usize,
    pub next_return: Vec<f64>,
    /// Annualised `sigma_t`.
    pub sigma: Vec<f64>,
    /// `1 / sigma_{t-1}` where a previous position exists, else `0`.
    pub prev_scale: Vec<f64>,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `r / sigma_daily`.
    pub fn normalised_returns(&self) -> Vec<f64> {
        self.next_return
            .iter()
            .zip(&self.sigma)
            .map(|(r, s)| r / (s / ANNUALISATION.sqrt()))
            .collect()
    }
}

/// A training unit: a single window for feed-forward models or a
/// trajectory of consecutive steps for the LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub asset: usize,
    /// Last index for windows, first index for trajectories.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub architecture: Architecture,
    pub train: Vec<Unit>,
    pub validation: Vec<Unit>,
    /// Trajectory length; 1 for feed-forward models.
    pub steps: usize,
}

impl Split {
    pub fn n_train_samples(&self) -> usize {
        self.train.len() * self.steps
    }

    pub fn n_validation_samples(&self) -> usize {
        self.validation.len() * self.steps
    }
}

/// Chronological per-asset split of every sample whose target date falls
/// before `boundary`. The earliest `1 - validation_fraction` of each asset's
/// samples train; the rest validate. LSTM trajectories are non-overlapping
/// runs of `steps` consecutive samples; those straddling the split are dropped.
pub fn split(
    panel: &Panel,
    architecture: Architecture,
    boundary: Option<NaiveDate>,
    validation_fraction: f64,
    steps: usize,
) -> Result<Split> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(LearnError::InvalidArgument(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    let window = architecture.window();
    let steps = if architecture.is_recurrent() { steps.max(1) } else { 1 };
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (a, asset) in panel.assets.iter().enumerate() {
        let eligible: Vec<usize> = (0..asset.len())
            .filter(|&t| {
                let target_ok = match boundary {
                    Some(b) => t + 1 < asset.len() && asset.dates[t + 1] < b,
                    None => true,
                };
                target_ok && asset.is_sample(t, window)
            })
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let n_train = ((eligible.len() as f64) * (1.0 - validation_fraction)).floor() as usize;
        if steps == 1 {
            for (k, &t) in eligible.iter().enumerate() {
                let unit = Unit { asset: a, t };
                if k < n_train {
                    train.push(unit);
                } else {
                    validation.push(unit);
                }
            }
            continue;
        }
        let (head, tail) = eligible.split_at(n_train);
        train.extend(trajectories(head, steps).map(|t| Unit { asset: a, t }));
        validation.extend(trajectories(tail, steps).map(|t| Unit { asset: a, t }));
    }
    Ok(Split {
        architecture,
        train,
        validation,
        steps,
    })
}

/// Starts of consecutive non-overlapping runs of `steps` indices.
fn trajectories(indices: &[usize], steps: usize) -> impl Iterator<Item = usize> + '_ {
    let mut k = 0;
    std::iter::from_fn(move || {
        while k < indices.len() {
            let start = indices[k];
            let mut len = 1;
            while k + len < indices.len() && indices[k + len] == start + len && len < steps {
                len += 1;
            }
            k += len;
            if len == steps {
                return Some(start);
            }
        }
        None
    })
}

/// Targets for a batch of units, rows per unit and `steps` columns.
pub fn targets(panel: &Panel, units: &[Unit], steps: usize) -> Targets {
    let n = units.len() * steps;
    let mut next_return = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut prev_scale = Vec::with_capacity(n);
    for u in units {
        let asset = &panel.assets[u.asset];
        for s in 0..steps {
            let t = u.t + s;
            next_return.push(asset.next_return[t].expect("sample has a target"));
            sigma.push(asset.sigma[t].expect("sample has a volatility"));
            prev_scale.push(if steps > 1 {
                if s == 0 {
                    0.0
                } else {
                    1.0 / asset.sigma[t - 1].expect("trajectory step")
                }
            } else {
                0.0
            });
        }
    }
    Targets {
        rows: units.len(),
        cols: steps,
        next_return,
        sigma,
        prev_scale,
    }
}

/// Whether the feed-forward window ending at `t - 1` is available, and its
/// `1 / sigma_{t-1}`.
pub fn previous_window(panel: &Panel, unit: Unit, window: usize) -> Option<f64> {
    let asset = &panel.assets[unit.asset];
    if unit.t == 0 || !asset.window_valid(unit.t - 1, window) {
        return None;
    }
    asset.usable_sigma(unit.t - 1).map(|s| 1.0 / s)
}
