//! Training objectives and the L1 penalty, built on the autodiff graph.

use std::fmt;
use std::str::FromStr;

use dmn_autodiff::{Graph, Tensor, Var};
use dmn_core::market_data::{ANNUALISATION, VOL_TARGET};
use serde::{Deserialize, Serialize};

use crate::model::OutputHead;
use crate::panel::Targets;
use crate::{LearnError, Result};

/// Guard inside the Sharpe loss square root.
pub const SHARPE_EPS: f64 = 1e-12;
/// Probability clamp of the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Binary,
    Returns,
    Sharpe,
    SharpeCost,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [Self::Mse, Self::Binary, Self::Returns, Self::Sharpe, Self::SharpeCost];

    pub fn head(self) -> OutputHead {
        match self {
            Self::Mse => OutputHead::Linear,
            Self::Binary => OutputHead::Sigmoid,
            _ => OutputHead::Tanh,
        }
    }

    /// The model emits positions rather than trend estimates.
    pub fn is_direct(self) -> bool {
        matches!(self, Self::Returns | Self::Sharpe | Self::SharpeCost)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::Binary => "binary",
            Self::Returns => "returns",
            Self::Sharpe => "sharpe",
            Self::SharpeCost => "sharpe_cost",
        }
    }

    /// Maps a model output to a position in `[-1, 1]`.
    pub fn position(self, z: f64) -> f64 {
        match self {
            Self::Mse => dmn_core::rules::sgn(z),
            Self::Binary => dmn_core::rules::sgn(z - 0.5),
            _ => z.clamp(-1.0, 1.0),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| LearnError::InvalidArgument(format!("unknown loss `{s}`")))
    }
}

/// Loss kind with its transaction cost `c` (return units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: LossKind,
    pub cost: f64,
}

impl Objective {
    pub fn new(kind: LossKind, cost: f64) -> Result<Self> {
        if !(cost >= 0.0) {
            return Err(LearnError::InvalidArgument(format!("cost must be non-negative, got {cost}")));
        }
        Ok(Self { kind, cost })
    }

    /// A previous-day position enters the loss.
    pub fn needs_previous(&self) -> bool {
        self.kind == LossKind::SharpeCost && self.cost > 0.0
    }
}

fn column(g: &mut Graph, t: &Targets, values: Vec<f64>) -> Result<Var> {
    Ok(g.constant(Tensor::matrix(t.rows, t.cols, values)?))
}

fn check(t: &Targets, min: usize) -> Result<()> {
    if t.len() < min {
        return Err(LearnError::EmptyDataset(format!(
            "loss needs at least {min} samples, got {}",
            t.len()
        )));
    }
    Ok(())
}

/// `mean((Y - r / sigma_daily)^2)`.
pub fn mse_loss(g: &mut Graph, y: Var, t: &Targets) -> Result<Var> {
    check(t, 1)?;
    let target = column(g, t, t.normalised_returns())?;
    let d = g.sub(y, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Cross-entropy against the indicator `r / sigma > 0`.
pub fn bce_loss(g: &mut Graph, y: Var, t: &Targets) -> Result<Var> {
    check(t, 1)?;
    let ind: Vec<f64> = t.normalised_returns().iter().map(|v| f64::from(u8::from(*v > 0.0))).collect();
    let not_ind: Vec<f64> = ind.iter().map(|v| 1.0 - v).collect();
    let p = g.clamp(y, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let log_p = g.log(p);
    let neg = g.neg(p);
    let q = g.add_scalar(neg, 1.0);
    let log_q = g.log(q);
    let ind = column(g, t, ind)?;
    let not_ind = column(g, t, not_ind)?;
    let a = g.mul(log_p, ind)?;
    let b = g.mul(log_q, not_ind)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.neg(m))
}

/// `R = X * (sigma_tgt / sigma) * r`.
pub fn captured_returns(g: &mut Graph, x: Var, t: &Targets) -> Result<Var> {
    let scale: Vec<f64> = t
        .next_return
        .iter()
        .zip(&t.sigma)
        .map(|(r, s)| VOL_TARGET / s * r)
        .collect();
    let scale = column(g, t, scale)?;
    Ok(g.mul(x, scale)?)
}

pub fn avg_returns_loss(g: &mut Graph, x: Var, t: &Targets) -> Result<Var> {
    check(t, 1)?;
    let r = captured_returns(g, x, t)?;
    let m = g.mean(r);
    Ok(g.neg(m))
}

/// `-mean(R) sqrt(252) / sqrt(mean(R^2) - mean(R)^2 + eps)`.
pub fn sharpe_of(g: &mut Graph, r: Var) -> Result<Var> {
    let mu = g.mean(r);
    let sq = g.square(r);
    let m2 = g.mean(sq);
    let mu2 = g.square(mu);
    let var = g.sub(m2, mu2)?;
    let var = g.add_scalar(var, SHARPE_EPS);
    let sd = g.sqrt(var);
    let ratio = g.div(mu, sd)?;
    Ok(g.mul_scalar(ratio, -ANNUALISATION.sqrt()))
}

pub fn sharpe_loss(g: &mut Graph, x: Var, t: &Targets) -> Result<Var> {
    check(t, 2)?;
    let r = captured_returns(g, x, t)?;
    sharpe_of(g, r)
}

/// Sharpe loss on `sigma_tgt (X r / sigma - c |X / sigma - X_prev / sigma_prev|)`.
/// `x_prev` must share the shape of `x`; entries without a previous
/// position carry a zero in `Targets::prev_scale`.
pub fn cost_adjusted_sharpe_loss(g: &mut Graph, x: Var, x_prev: Option<Var>, t: &Targets, cost: f64) -> Result<Var> {
    if !(cost >= 0.0) {
        return Err(LearnError::InvalidArgument(format!("cost must be non-negative, got {cost}")));
    }
    if cost == 0.0 {
        return sharpe_loss(g, x, t);
    }
    check(t, 2)?;
    let x_prev = x_prev.ok_or_else(|| LearnError::InvalidArgument("previous positions required".into()))?;
    let r = captured_returns(g, x, t)?;
    let inv_sigma: Vec<f64> = t.sigma.iter().map(|s| 1.0 / s).collect();
    let inv_sigma = column(g, t, inv_sigma)?;
    let prev_scale = column(g, t, t.prev_scale.clone())?;
    let now = g.mul(x, inv_sigma)?;
    let before = g.mul(x_prev, prev_scale)?;
    let change = g.sub(now, before)?;
    let change = g.abs(change);
    let drag = g.mul_scalar(change, cost * VOL_TARGET);
    let net = g.sub(r, drag)?;
    sharpe_of(g, net)
}

/// `alpha * sum(|w|)`.
pub fn l1_penalty(g: &mut Graph, w: Var, alpha: f64) -> Result<Var> {
    if !(alpha >= 0.0) {
        return Err(LearnError::InvalidArgument(format!("L1 weight must be non-negative, got {alpha}")));
    }
    let a = g.abs(w);
    let s = g.sum(a);
    Ok(g.mul_scalar(s, alpha))
}

/// Dispatches to the loss of `objective`.
pub fn task_loss(g: &mut Graph, z: Var, z_prev: Option<Var>, t: &Targets, objective: &Objective) -> Result<Var> {
    match objective.kind {
        LossKind::Mse => mse_loss(g, z, t),
        LossKind::Binary => bce_loss(g, z, t),
        LossKind::Returns => avg_returns_loss(g, z, t),
        LossKind::Sharpe => sharpe_loss(g, z, t),
        LossKind::SharpeCost => cost_adjusted_sharpe_loss(g, z, z_prev, t, objective.cost),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(r: Vec<f64>, sigma: Vec<f64>) -> Targets {
        let n = r.len();
        Targets {
            rows: n,
            cols: 1,
            next_return: r,
            sigma,
            prev_scale: vec![0.0; n],
        }
    }

    fn eval(f: impl FnOnce(&mut Graph) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.value(v).item().unwrap()
    }

    fn col(g: &mut Graph, v: Vec<f64>) -> Var {
        g.param(Tensor::column(v))
    }

    /// Daily sigma of 1 so that `r / sigma_daily = r`.
    fn unit_daily() -> f64 {
        ANNUALISATION.sqrt()
    }

    #[test]
    fn mse_examples() {
        let t = targets(vec![1.0, -1.0], vec![unit_daily(); 2]);
        let v = eval(|g| {
            let y = col(g, vec![0.0, 0.0]);
            mse_loss(g, y, &t)
        });
        assert!((v - 1.0).abs() < 1e-12);
        let v = eval(|g| {
            let y = col(g, vec![1.0, -1.0]);
            mse_loss(g, y, &t)
        });
        assert!(v.abs() < 1e-12);
        let empty = targets(vec![], vec![]);
        let mut g = Graph::new();
        let y = g.param(Tensor::zeros(&[0, 1]));
        assert!(mse_loss(&mut g, y, &empty).is_err());
    }

    #[test]
    fn bce_examples() {
        let t = targets(vec![0.01, -0.02, 0.0], vec![0.15; 3]);
        let v = eval(|g| {
            let y = col(g, vec![0.5; 3]);
            bce_loss(g, y, &t)
        });
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let t = targets(vec![0.01], vec![0.15]);
        let v = eval(|g| {
            let y = col(g, vec![0.9]);
            bce_loss(g, y, &t)
        });
        assert!((v + 0.9f64.ln()).abs() < 1e-12);
        // a zero return counts as a negative outcome
        let t = targets(vec![0.0], vec![0.15]);
        let v = eval(|g| {
            let y = col(g, vec![0.9]);
            bce_loss(g, y, &t)
        });
        assert!((v + 0.1f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn returns_examples() {
        let t = targets(vec![0.01], vec![0.15]);
        let v = eval(|g| {
            let x = col(g, vec![1.0]);
            avg_returns_loss(g, x, &t)
        });
        assert!((v + 0.01).abs() < 1e-15);
        let t = targets(vec![0.01, -0.03], vec![0.15, 0.2]);
        let a = eval(|g| {
            let x = col(g, vec![0.4, -0.7]);
            avg_returns_loss(g, x, &t)
        });
        let b = eval(|g| {
            let x = col(g, vec![-0.4, 0.7]);
            avg_returns_loss(g, x, &t)
        });
        assert_eq!(a, -b);
    }

    #[test]
    fn sharpe_examples() {
        let t = targets(vec![0.01, 0.02, -0.01], vec![VOL_TARGET; 3]);
        let v = eval(|g| {
            let x = col(g, vec![1.0; 3]);
            sharpe_loss(g, x, &t)
        });
        assert!((v + 8.4852).abs() < 1e-3, "{v}");
        let wide = targets(vec![0.1, 0.2, -0.1], vec![VOL_TARGET; 3]);
        let base = eval(|g| {
            let x = col(g, vec![1.0; 3]);
            sharpe_loss(g, x, &wide)
        });
        let scaled = eval(|g| {
            let x = col(g, vec![2.0; 3]);
            sharpe_loss(g, x, &wide)
        });
        assert!((scaled - base).abs() < 1e-9);
        let flat = targets(vec![0.01; 4], vec![VOL_TARGET; 4]);
        let v = eval(|g| {
            let x = col(g, vec![1.0; 4]);
            sharpe_loss(g, x, &flat)
        });
        assert!(v.is_finite() && v < -1e3);
    }

    #[test]
    fn cost_free_sharpe_is_identical() {
        let t = targets(vec![0.01, 0.02, -0.01, 0.004], vec![0.1, 0.2, 0.15, 0.3]);
        let a = eval(|g| {
            let x = col(g, vec![0.3, -0.2, 0.9, 0.1]);
            sharpe_loss(g, x, &t)
        });
        let b = eval(|g| {
            let x = col(g, vec![0.3, -0.2, 0.9, 0.1]);
            cost_adjusted_sharpe_loss(g, x, None, &t, 0.0)
        });
        assert_eq!(a.to_bits(), b.to_bits());
        let mut g = Graph::new();
        let x = col(&mut g, vec![0.3, -0.2, 0.9, 0.1]);
        assert!(cost_adjusted_sharpe_loss(&mut g, x, None, &t, -0.1).is_err());
    }

    #[test]
    fn cost_term_on_a_flip() {
        let mut t = targets(vec![0.0, 0.01], vec![0.15, 0.15]);
        t.prev_scale = vec![1.0 / 0.15, 1.0 / 0.15];
        let got = eval(|g| {
            let x = g.param(Tensor::column(vec![1.0, 1.0]));
            let xp = g.constant(Tensor::column(vec![-1.0, 1.0]));
            cost_adjusted_sharpe_loss(g, x, Some(xp), &t, 0.001)
        });
        let expected = eval(|g| {
            let net = g.constant(Tensor::column(vec![-0.002, 0.01]));
            sharpe_of(g, net)
        });
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn l1_examples() {
        let v = eval(|g| {
            let w = g.param(Tensor::column(vec![1.0, -2.0]));
            l1_penalty(g, w, 0.1)
        });
        assert!((v - 0.3).abs() < 1e-15);
        let mut g = Graph::new();
        let w = g.param(Tensor::column(vec![0.5, -2.0, 0.0]));
        let l = l1_penalty(&mut g, w, 0.1).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().values(), &[0.1, -0.1, 0.0]);
        assert!(l1_penalty(&mut g, w, -1.0).is_err());
    }

    #[test]
    fn positions_from_outputs() {
        assert_eq!(LossKind::Mse.position(-0.3), -1.0);
        assert_eq!(LossKind::Binary.position(0.7), 1.0);
        assert_eq!(LossKind::Binary.position(0.5), 0.0);
        assert_eq!(LossKind::Sharpe.position(0.42), 0.42);
    }
}
