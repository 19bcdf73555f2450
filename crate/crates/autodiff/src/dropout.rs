//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time
//! so inference is the identity.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Inference,
    /// Fresh mask on every application.
    PerStep,
    /// One mask per sequence, reused at every time step.
    Variational,
}

/// Samples an inverted-dropout mask. Each entry is `0` with probability
/// `rate` and `1 / (1 - rate)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut mask = Tensor::zeros(shape);
    for v in mask.values_mut() {
        if rng.random::<f64>() < keep {
            *v = scale;
        }
    }
    mask
}

/// Applies dropout to `x` with a freshly sampled mask.
///
/// Identity in inference mode or when `rate == 0`. In variational mode the
/// caller is expected to hold a [`SequenceMask`] instead; calling this with
/// `Variational` behaves like `PerStep`.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Var> {
    if mode == DropoutMode::Inference || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.shape(x), rate, rng);
    let m = g.constant(mask);
    g.mul(x, m)
}

/// A mask sampled once per sequence and applied at each step.
#[derive(Debug, Clone)]
pub struct SequenceMask {
    mask: Option<Tensor>,
}

impl SequenceMask {
    pub fn sample<R: Rng + ?Sized>(
        shape: &[usize],
        rate: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Self {
        let mask = match mode {
            DropoutMode::Inference => None,
            _ if rate == 0.0 => None,
            _ => Some(dropout_mask(shape, rate, rng)),
        };
        Self { mask }
    }

    pub fn identity() -> Self {
        Self { mask: None }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match &self.mask {
            None => Ok(x),
            Some(mask) => {
                let m = g.constant(mask.clone());
                g.mul(x, m)
            }
        }
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }
}
