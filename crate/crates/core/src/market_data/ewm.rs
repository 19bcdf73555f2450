//! Exponentially weighted moments.
//!
//! Statistics use the normalised explicit-weight form: at step `t` the mean
//! is `sum_k w^k x_{t-k} / sum_k w^k` over the whole prefix, and the variance
//! is the matching weighted (bias-uncorrected) second central moment. The
//! running update below is the weighted incremental algorithm, which gives
//! the same numbers without the `E[x^2] - E[x]^2` cancellation.

use crate::{CoreError, Result};

/// Observations required before any EWM statistic is emitted.
pub const EWM_WARMUP: usize = 10;

/// Per-step retention factor `w` of an exponential filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay(f64);

impl Decay {
    /// Span convention: `alpha = 2 / (span + 1)`, `w = 1 - alpha`.
    pub fn from_span(span: usize) -> Result<Self> {
        if span < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "EWM span must be at least 2, got {span}"
            )));
        }
        Ok(Self(1.0 - span_alpha(span)))
    }

    /// `w = 0.5^(1 / half_life)`.
    pub fn from_half_life(half_life: f64) -> Result<Self> {
        if !(half_life > 0.0) || !half_life.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "half-life must be positive, got {half_life}"
            )));
        }
        Ok(Self(half_life_decay(half_life)))
    }

    pub fn retention(self) -> f64 {
        self.0
    }

    pub fn alpha(self) -> f64 {
        1.0 - self.0
    }
}

pub fn span_alpha(span: usize) -> f64 {
    2.0 / (span as f64 + 1.0)
}

pub fn half_life_decay(half_life: f64) -> f64 {
    0.5_f64.powf(1.0 / half_life)
}

/// Running exponentially weighted mean and variance.
#[derive(Debug, Clone)]
pub struct EwmMoments {
    decay: f64,
    weight: f64,
    mean: f64,
    sq_dev: f64,
    count: usize,
}

impl EwmMoments {
    pub fn new(decay: Decay) -> Self {
        Self {
            decay: decay.0,
            weight: 0.0,
            mean: 0.0,
            sq_dev: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.weight *= self.decay;
        self.sq_dev *= self.decay;
        self.weight += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.weight;
        self.sq_dev += delta * (x - self.mean);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.weight == 0.0 {
            0.0
        } else {
            (self.sq_dev / self.weight).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Causal EWM standard deviation with span-convention decay.
///
/// Entry `t` uses `values[..=t]`; it is `None` until `min(span, 10)`
/// observations have been seen.
pub fn ewm_std(values: &[f64], span: usize) -> Result<Vec<Option<f64>>> {
    let decay = Decay::from_span(span)?;
    if values.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "EWM standard deviation needs at least 2 points".into(),
        ));
    }
    let warmup = span.min(EWM_WARMUP);
    let mut moments = EwmMoments::new(decay);
    Ok(values
        .iter()
        .map(|&x| {
            moments.push(x);
            (moments.count() >= warmup).then(|| moments.std())
        })
        .collect())
}

/// Causal EWM mean for an arbitrary decay; `None` during warm-up.
pub fn ewm_mean(values: &[f64], decay: Decay) -> Vec<Option<f64>> {
    let mut moments = EwmMoments::new(decay);
    values
        .iter()
        .map(|&x| {
            moments.push(x);
            (moments.count() >= EWM_WARMUP).then(|| moments.mean())
        })
        .collect()
}

/// Half-life used for winsorisation statistics.
pub const WINSOR_HALF_LIFE: f64 = 252.0;
/// Clip distance in EWM standard deviations.
pub const WINSOR_WIDTH: f64 = 5.0;

/// Caps and floors each value to `mean ± 5 std`, where the EWM statistics
/// (252-day half-life) are those of the already-winsorised values strictly
/// before it. Values during warm-up pass through unchanged.
///
/// Because the statistics are built from the output, applying the function
/// twice gives the same series.
pub fn winsorise(values: &[f64]) -> Vec<f64> {
    let decay = Decay::from_half_life(WINSOR_HALF_LIFE).expect("positive half-life");
    let mut moments = EwmMoments::new(decay);
    values
        .iter()
        .map(|&x| {
            let y = if moments.count() >= EWM_WARMUP {
                let centre = moments.mean();
                let width = WINSOR_WIDTH * moments.std();
                x.clamp(centre - width, centre + width)
            } else {
                x
            };
            moments.push(y);
            y
        })
        .collect()
}
