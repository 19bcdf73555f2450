//! Central finite-difference check of parameter gradients.

use dmn_autodiff::DropoutMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::Model;
use crate::objectives::Objective;
use crate::panel::{Panel, Unit};
use crate::trainer::loss_and_gradients;
use crate::Result;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub n_checked: usize,
}

/// Compares analytic gradients with `(L(p + eps) - L(p - eps)) / 2 eps` for
/// every parameter entry. Dropout masks are frozen by re-seeding per pass.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    model: &Model,
    panel: &Panel,
    units: &[Unit],
    steps: usize,
    objective: &Objective,
    l1_alpha: Option<f64>,
    eps: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mode = if model.spec.dropout_rate > 0.0 {
        if model.spec.architecture.is_recurrent() {
            DropoutMode::Variational
        } else {
            DropoutMode::PerStep
        }
    } else {
        DropoutMode::Inference
    };
    let eval = |m: &Model| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loss_and_gradients(m, panel, units, steps, objective, l1_alpha, mode, &mut rng)
    };
    let (_, grads) = eval(model)?;
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        n_checked: 0,
    };
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let n = model.params.get(&name)?.len();
        for i in 0..n {
            let base = model.params.get(&name)?.values()[i];
            probe.params.get_mut(&name)?.values_mut()[i] = base + eps;
            let up = eval(&probe)?.0;
            probe.params.get_mut(&name)?.values_mut()[i] = base - eps;
            let down = eval(&probe)?.0;
            probe.params.get_mut(&name)?.values_mut()[i] = base;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(&name)?.values()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(REL_FLOOR);
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = (name.clone(), i);
            }
            out.n_checked += 1;
        }
    }
    Ok(out)
}
