//! Adam and global-norm gradient clipping.

use dmn_autodiff::{ParamStore, Tensor};

use crate::{LearnError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    step: i32,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros = |p: &ParamStore| {
            let mut out = ParamStore::new();
            for (name, t) in p.iter() {
                out.insert(name.clone(), Tensor::zeros(t.shape()));
            }
            out
        };
        Self {
            learning_rate,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Bias-corrected Adam update. Non-finite gradients abort the step.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if !grads.all_finite() {
            return Err(LearnError::Diverged("non-finite gradient".into()));
        }
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?.values();
            let m = self.m.get_mut(name)?.values_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            }
            let m = self.m.get(name)?.values();
            let v = self.v.get_mut(name)?.values_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let v = self.v.get(name)?.values();
            for ((pi, mi), vi) in p.values_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ParamStore, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(LearnError::InvalidArgument(format!("max gradient norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.values_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::column(values));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(vec![1.0, -2.0]);
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &store(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.get("w").unwrap().values(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(vec![0.0, 0.0]);
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &store(vec![3.0, -0.2])).unwrap();
        let w = p.get("w").unwrap().values();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn second_step_is_not_larger() {
        let mut p = store(vec![0.0]);
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &store(vec![0.5])).unwrap();
        let first = p.get("w").unwrap().values()[0].abs();
        adam.step(&mut p, &store(vec![0.5])).unwrap();
        let second = p.get("w").unwrap().values()[0].abs() - first;
        assert!(second <= first * 1.1);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = store(vec![0.0]);
        let mut adam = Adam::new(&p, 0.01);
        assert!(adam.step(&mut p, &store(vec![f64::NAN])).is_err());
    }

    #[test]
    fn clipping_examples() {
        let mut g = store(vec![0.3, 0.4]);
        clip_gradients(&mut g, 1.0).unwrap();
        assert_eq!(g.get("w").unwrap().values(), &[0.3, 0.4]);
        let mut g = store(vec![3.0, 4.0]);
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 5.0);
        let w = g.get("w").unwrap().values();
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        assert!(clip_gradients(&mut g, 0.0).is_err());
    }
}
