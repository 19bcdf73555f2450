//! Tape of recorded operations and the reverse sweep over it.

use crate::tensor::Tensor;
use crate::{AutodiffError, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is stretched onto the left one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// rhs is `[1, n]` (or `[n]`) against lhs `[m, n]`.
    Row,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Values are computed eagerly as operations are recorded, so the node list
/// is topologically ordered by construction. [`Graph::backward`] walks it in
/// reverse once, accumulating gradients by summation on fan-out.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Only leaves created with `requires_grad` (and values
    /// derived from them) ever receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        let shape = self.nodes[v.0].value.shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("gradient matches value shape"))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2().ok_or_else(|| AutodiffError::Rank {
            op,
            shape: self.shape(v).to_vec(),
        })
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---------------------------------------------------------------------
    // primitives
    // ---------------------------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims("matmul", a)?;
        let (k2, n) = self.dims("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product; `b` may also be a scalar or a row vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = self.broadcast_kind(name, a, b)?;
        let lhs = self.value(a);
        let rhs = self.value(b).values();
        let values: Vec<f64> = match bc {
            Broadcast::Same => lhs.values().iter().zip(rhs).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => lhs.values().iter().map(|&x| f(x, rhs[0])).collect(),
            Broadcast::Row => {
                let n = rhs.len();
                lhs.values()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, rhs[i % n]))
                    .collect()
            }
        };
        let value = Tensor::new(lhs.shape().to_vec(), values)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op(a, b, bc), rg))
    }

    fn broadcast_kind(&self, name: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (m, n) = self.dims(name, a)?;
        let (p, q) = self.dims(name, b)?;
        if (m, n) == (p, q) {
            Ok(Broadcast::Same)
        } else if p * q == 1 {
            Ok(Broadcast::Scalar)
        } else if p == 1 && q == n {
            Ok(Broadcast::Row)
        } else {
            Err(self.mismatch(name, a, b))
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Concatenates along columns. All inputs need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let (rows, _) = self.dims("concat", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims("concat", p)?;
            if r != rows {
                return Err(self.mismatch("concat", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for row in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let vals = self.value(p).values();
                out.extend_from_slice(&vals[row * w..(row + 1) * w]);
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.dims("slice", a)?;
        if start >= end || end > cols {
            return Err(AutodiffError::SliceRange { start, end, cols });
        }
        let vals = self.value(a).values();
        let width = end - start;
        let mut out = Vec::with_capacity(rows * width);
        for row in 0..rows {
            out.extend_from_slice(&vals[row * cols + start..row * cols + end]);
        }
        let value = Tensor::new(vec![rows, width], out)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).values();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    // ---------------------------------------------------------------------
    // reverse sweep
    // ---------------------------------------------------------------------

    /// Populates `d loss / d v` for every node that requires a gradient.
    ///
    /// Gradients from any previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.grads[idx] = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, contribution: impl FnOnce(usize) -> Vec<f64>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let len = self.nodes[target.0].value.len();
        let delta = contribution(len);
        match &mut self.grads[target.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, up: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let (_, n) = self.value(b).dims2().unwrap();
                if self.requires_grad(a) {
                    let bv = self.value(b).values().to_vec();
                    self.accumulate(a, |_| matmul_a_bt(up, &bv, m, n, k));
                }
                if self.requires_grad(b) {
                    let av = self.value(a).values().to_vec();
                    self.accumulate(b, |_| matmul_at_b(&av, up, m, k, n));
                }
            }
            Op::Add(a, b, bc) => {
                self.accumulate(a, |_| up.to_vec());
                self.accumulate_rhs(b, bc, up, |g, _| g);
            }
            Op::Sub(a, b, bc) => {
                self.accumulate(a, |_| up.to_vec());
                self.accumulate_rhs(b, bc, up, |g, _| -g);
            }
            Op::Mul(a, b, bc) => {
                if self.requires_grad(a) {
                    let lhs_len = self.value(a).len();
                    let rhs = self.value(b).values().to_vec();
                    self.accumulate(a, |_| {
                        (0..lhs_len).map(|i| up[i] * rhs_at(&rhs, bc, i)).collect()
                    });
                }
                if self.requires_grad(b) {
                    let lhs = self.value(a).values().to_vec();
                    self.accumulate_rhs(b, bc, up, |g, i| g * lhs[i]);
                }
            }
            Op::Div(a, b, bc) => {
                let rhs = self.value(b).values().to_vec();
                if self.requires_grad(a) {
                    let lhs_len = self.value(a).len();
                    self.accumulate(a, |_| {
                        (0..lhs_len).map(|i| up[i] / rhs_at(&rhs, bc, i)).collect()
                    });
                }
                if self.requires_grad(b) {
                    let lhs = self.value(a).values().to_vec();
                    self.accumulate_rhs(b, bc, up, |g, i| {
                        let y = rhs_at(&rhs, bc, i);
                        -g * lhs[i] / (y * y)
                    });
                }
            }
            Op::Neg(a) => self.accumulate(a, |_| up.iter().map(|g| -g).collect()),
            Op::AddScalar(a) => self.accumulate(a, |_| up.to_vec()),
            Op::MulScalar(a, s) => self.accumulate(a, |_| up.iter().map(|g| g * s).collect()),
            Op::Tanh(a) => {
                let out = self.nodes[idx].value.values().to_vec();
                self.accumulate(a, |_| zip_map(up, &out, |g, y| g * (1.0 - y * y)));
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[idx].value.values().to_vec();
                self.accumulate(a, |_| zip_map(up, &out, |g, y| g * y * (1.0 - y)));
            }
            Op::Square(a) => {
                let x = self.value(a).values().to_vec();
                self.accumulate(a, |_| zip_map(up, &x, |g, x| 2.0 * g * x));
            }
            Op::Sqrt(a) => {
                let out = self.nodes[idx].value.values().to_vec();
                self.accumulate(a, |_| zip_map(up, &out, |g, y| 0.5 * g / y));
            }
            Op::Abs(a) => {
                let x = self.value(a).values().to_vec();
                self.accumulate(a, |_| zip_map(up, &x, |g, x| g * sign(x)));
            }
            Op::Log(a) => {
                let x = self.value(a).values().to_vec();
                self.accumulate(a, |_| zip_map(up, &x, |g, x| g / x));
            }
            Op::Exp(a) => {
                let out = self.nodes[idx].value.values().to_vec();
                self.accumulate(a, |_| zip_map(up, &out, |g, y| g * y));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(a).values().to_vec();
                self.accumulate(a, |_| {
                    zip_map(up, &x, |g, x| if x > lo && x < hi { g } else { 0.0 })
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = self.nodes[idx].value.dims2().unwrap();
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(p).dims2().unwrap();
                    self.accumulate(p, |_| {
                        let mut g = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            g.extend_from_slice(&up[r * total + offset..r * total + offset + w]);
                        }
                        g
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.value(a).dims2().unwrap();
                let (_, width) = self.nodes[idx].value.dims2().unwrap();
                self.accumulate(a, |len| {
                    let mut g = vec![0.0; len];
                    for r in 0..rows {
                        g[r * cols + start..r * cols + start + width]
                            .copy_from_slice(&up[r * width..(r + 1) * width]);
                    }
                    g
                });
            }
            Op::Sum(a) => self.accumulate(a, |len| vec![up[0]; len]),
            Op::Mean(a) => self.accumulate(a, |len| vec![up[0] / len as f64; len]),
        }
    }

    /// Reduces a full-shape gradient back onto a broadcast right operand.
    fn accumulate_rhs(
        &mut self,
        b: Var,
        bc: Broadcast,
        up: &[f64],
        f: impl Fn(f64, usize) -> f64,
    ) {
        self.accumulate(b, |len| match bc {
            Broadcast::Same => up.iter().enumerate().map(|(i, &g)| f(g, i)).collect(),
            Broadcast::Scalar => vec![up.iter().enumerate().map(|(i, &g)| f(g, i)).sum()],
            Broadcast::Row => {
                let mut out = vec![0.0; len];
                for (i, &g) in up.iter().enumerate() {
                    out[i % len] += f(g, i);
                }
                out
            }
        });
    }
}

fn rhs_at(rhs: &[f64], bc: Broadcast, i: usize) -> f64 {
    match bc {
        Broadcast::Same => rhs[i],
        Broadcast::Scalar => rhs[0],
        Broadcast::Row => rhs[i % rhs.len()],
    }
}

fn zip_map(up: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    up.iter().zip(other).map(|(&g, &x)| f(g, x)).collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// `dC [m, n] x B^T` where `B` is `[k, n]`.
fn matmul_a_bt(dc: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `A^T x dC` where `A` is `[m, k]` and `dC` is `[m, n]`.
fn matmul_at_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &g) in orow.iter_mut().zip(drow) {
                *o += x * g;
            }
        }
    }
    out
}
