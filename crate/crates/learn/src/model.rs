//! The four signal generators: lasso-linear, MLP, WaveNet and LSTM.

use std::fmt;
use std::str::FromStr;

use dmn_autodiff::{
    dropout, DropoutMode, Graph, ParamStore, ParamVars, SequenceMask, Tensor, Var,
};
use dmn_core::market_data::N_FEATURES;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{LearnError, Result};

/// `tau`: the feed-forward input is `[u_{t-tau}, ..., u_t]`.
pub const TAU: usize = 5;
/// Rows seen by the WaveNet at one prediction.
pub const WAVENET_WINDOW: usize = 63;
/// LSTM training trajectory length.
pub const TRAJECTORY_LEN: usize = 63;
/// Lags of the weekly states consumed by the monthly and quarterly levels.
const WEEKLY_LAGS: [usize; 4] = [0, 5, 10, 15];
const MONTHLY_LAGS: [usize; 3] = [0, 21, 42];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp,
    #[serde(rename = "wavenet")]
    WaveNet,
    Lstm,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Linear, Self::Mlp, Self::WaveNet, Self::Lstm];

    /// Feature rows consumed per prediction; 1 for the recurrent model.
    pub fn window(self) -> usize {
        match self {
            Self::Linear | Self::Mlp => TAU + 1,
            Self::WaveNet => WAVENET_WINDOW,
            Self::Lstm => 1,
        }
    }

    pub fn is_recurrent(self) -> bool {
        self == Self::Lstm
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Mlp => "mlp",
            Self::WaveNet => "wavenet",
            Self::Lstm => "lstm",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| LearnError::InvalidArgument(format!("unknown architecture `{s}`")))
    }
}

/// Output activation `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    Sigmoid,
    Tanh,
}

/// Architecture, sizes and head; the manifest stored next to a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub head: OutputHead,
    pub dropout_rate: f64,
    /// Input rows per prediction, or the trajectory length for the LSTM.
    pub window: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, hidden_size: usize, head: OutputHead, dropout_rate: f64) -> Result<Self> {
        if hidden_size == 0 {
            return Err(LearnError::InvalidArgument("hidden size must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(LearnError::InvalidArgument(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let window = match architecture {
            Architecture::Lstm => TRAJECTORY_LEN,
            a => a.window(),
        };
        Ok(Self {
            architecture,
            hidden_size,
            head,
            dropout_rate,
            window,
        })
    }

    /// Width of the flattened feed-forward input.
    pub fn input_width(&self) -> usize {
        self.architecture.window() * N_FEATURES
    }

    /// Parameter names and shapes, with the fan-in used for initialisation.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let h = self.hidden_size;
        let w = self.input_width();
        let mut out: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, fan_in: usize| out.push((name.to_string(), shape, fan_in));
        match self.architecture {
            Architecture::Linear => {
                push("w", vec![w, 1], w);
                push("b", vec![1, 1], w);
            }
            Architecture::Mlp => {
                push("w_h", vec![w, h], w);
                push("b_h", vec![1, h], w);
                push("w_z", vec![h, 1], h);
                push("b_z", vec![1, 1], h);
            }
            Architecture::WaveNet => {
                let weekly_in = (TAU + 1) * N_FEATURES;
                for (level, fan_in) in [("weekly", weekly_in), ("monthly", 4 * h), ("quarterly", 3 * h)] {
                    for m in ["w", "v", "a"] {
                        push(&format!("{level}_{m}"), vec![fan_in, h], fan_in);
                    }
                    push(&format!("{level}_b"), vec![1, h], fan_in);
                }
                push("w_h", vec![3 * h, h], 3 * h);
                push("b_h", vec![1, h], 3 * h);
                push("w_z", vec![h, 1], h);
                push("b_z", vec![1, 1], h);
            }
            Architecture::Lstm => {
                for gate in ["f", "i", "o", "c"] {
                    push(&format!("w_{gate}"), vec![N_FEATURES, h], N_FEATURES);
                    push(&format!("v_{gate}"), vec![h, h], h);
                    push(&format!("b_{gate}"), vec![1, h], h);
                }
                push("w_z", vec![h, 1], h);
                push("b_z", vec![1, 1], h);
            }
        }
        out
    }
}

/// Saved model: manifest plus named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

fn is_bias(name: &str) -> bool {
    name == "b" || name.starts_with("b_") || name.ends_with("_b")
}

impl Model {
    /// Weights uniform on `+-1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in spec.param_shapes() {
            let mut t = Tensor::zeros(&shape);
            if !is_bias(&name) {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in t.values_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
            }
            params.insert(name, t);
        }
        Self { spec, params }
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        let mut params = ParamStore::new();
        for (name, shape, _) in spec.param_shapes() {
            params.insert(name, Tensor::zeros(&shape));
        }
        Self { spec, params }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|source| LearnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| LearnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: Model = serde_json::from_str(&text)?;
        for (name, shape, _) in model.spec.param_shapes() {
            if model.params.get(&name)?.shape() != shape.as_slice() {
                return Err(LearnError::InvalidArgument(format!("checkpoint shape of `{name}`")));
            }
        }
        Ok(model)
    }

    /// Inference over flattened windows, `n` rows of [`ModelSpec::input_width`].
    pub fn predict_windows(&self, inputs: Vec<f64>, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let x = g.constant(Tensor::matrix(n, self.spec.input_width(), inputs)?);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let z = feedforward(&self.spec, &mut g, &vars, x, DropoutMode::Inference, &mut rng)?;
        Ok(g.value(z).values().to_vec())
    }

    /// LSTM outputs over consecutive rows from a zero state, inference mode.
    pub fn predict_sequence(&self, rows: &[[f64; N_FEATURES]]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let xs: Vec<Var> = rows
            .iter()
            .map(|r| Ok(g.constant(Tensor::matrix(1, N_FEATURES, r.to_vec())?)))
            .collect::<Result<_>>()?;
        let out = lstm_sequence(&self.spec, &mut g, &vars, &xs, None, &LstmMasks::identity())?;
        Ok(out.outputs.iter().map(|z| g.value(*z).values()[0]).collect())
    }

    /// One stateful LSTM step in inference mode.
    pub fn lstm_step(&self, row: &[f64; N_FEATURES], state: &mut LstmState) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let x = g.constant(Tensor::matrix(1, N_FEATURES, row.to_vec())?);
        let h0 = g.constant(state.h.clone());
        let c0 = g.constant(state.c.clone());
        let masks = LstmMasks::identity();
        let out = lstm_sequence(&self.spec, &mut g, &vars, &[x], Some((h0, c0)), &masks)?;
        state.h = g.value(out.h).clone();
        state.c = g.value(out.c).clone();
        Ok(g.value(out.outputs[0]).values()[0])
    }
}

/// Carried LSTM state for a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[1, hidden]),
            c: Tensor::zeros(&[1, hidden]),
        }
    }
}

fn p(vars: &ParamVars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| dmn_autodiff::AutodiffError::UnknownParam(name.to_string()).into())
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    Ok(g.add(xw, b)?)
}

pub fn apply_head(g: &mut Graph, pre: Var, head: OutputHead) -> Var {
    match head {
        OutputHead::Linear => pre,
        OutputHead::Sigmoid => g.sigmoid(pre),
        OutputHead::Tanh => g.tanh(pre),
    }
}

/// Gated residual layer `tanh(W u) * sigmoid(V u) + A u + b`.
fn gated(g: &mut Graph, vars: &ParamVars, level: &str, u: Var) -> Result<Var> {
    let w = p(vars, &format!("{level}_w"))?;
    let v = p(vars, &format!("{level}_v"))?;
    let a = p(vars, &format!("{level}_a"))?;
    let b = p(vars, &format!("{level}_b"))?;
    let wu = g.matmul(u, w)?;
    let filter = g.tanh(wu);
    let vu = g.matmul(u, v)?;
    let gate = g.sigmoid(vu);
    let gated = g.mul(filter, gate)?;
    let skip = affine(g, u, a, b)?;
    Ok(g.add(gated, skip)?)
}

/// Feed-forward models. `x` is `[B, window * 8]` with rows ordered oldest
/// first; returns `Z` as `[B, 1]`.
pub fn feedforward<R: Rng + ?Sized>(
    spec: &ModelSpec,
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Var> {
    let rate = spec.dropout_rate;
    let pre = match spec.architecture {
        Architecture::Linear => affine(g, x, p(vars, "w")?, p(vars, "b")?)?,
        Architecture::Mlp => {
            let x = dropout(g, x, rate, mode, rng)?;
            let a = affine(g, x, p(vars, "w_h")?, p(vars, "b_h")?)?;
            let h = g.tanh(a);
            let h = dropout(g, h, rate, mode, rng)?;
            affine(g, h, p(vars, "w_z")?, p(vars, "b_z")?)?
        }
        Architecture::WaveNet => {
            let x = dropout(g, x, rate, mode, rng)?;
            let s = wavenet_states(g, vars, x)?;
            let s = dropout(g, s, rate, mode, rng)?;
            let a = affine(g, s, p(vars, "w_h")?, p(vars, "b_h")?)?;
            let h = g.tanh(a);
            affine(g, h, p(vars, "w_z")?, p(vars, "b_z")?)?
        }
        Architecture::Lstm => {
            return Err(LearnError::InvalidArgument(
                "the LSTM consumes sequences, not windows".into(),
            ))
        }
    };
    Ok(apply_head(g, pre, spec.head))
}

/// `[s_weekly(t), s_monthly(t), s_quarterly(t)]` from a 63-row window.
fn wavenet_states(g: &mut Graph, vars: &ParamVars, x: Var) -> Result<Var> {
    let width = (TAU + 1) * N_FEATURES;
    let last_row = WAVENET_WINDOW - 1;
    let mut weekly = std::collections::BTreeMap::new();
    for &m in &MONTHLY_LAGS {
        for &w in &WEEKLY_LAGS {
            let lag = m + w;
            if weekly.contains_key(&lag) {
                continue;
            }
            let end = (last_row - lag + 1) * N_FEATURES;
            let u = g.slice_cols(x, end - width, end)?;
            weekly.insert(lag, gated(g, vars, "weekly", u)?);
        }
    }
    let mut monthly = Vec::with_capacity(MONTHLY_LAGS.len());
    for &m in &MONTHLY_LAGS {
        let parts: Vec<Var> = WEEKLY_LAGS.iter().map(|w| weekly[&(m + w)]).collect();
        let u = g.concat_cols(&parts)?;
        monthly.push(gated(g, vars, "monthly", u)?);
    }
    let u = g.concat_cols(&monthly)?;
    let quarterly = gated(g, vars, "quarterly", u)?;
    Ok(g.concat_cols(&[weekly[&0], monthly[0], quarterly])?)
}

/// Variational dropout masks for one batch of sequences.
#[derive(Debug, Clone)]
pub struct LstmMasks {
    pub input: SequenceMask,
    pub recurrent: SequenceMask,
    pub output: SequenceMask,
}

impl LstmMasks {
    pub fn sample<R: Rng + ?Sized>(spec: &ModelSpec, batch: usize, mode: DropoutMode, rng: &mut R) -> Self {
        let rate = spec.dropout_rate;
        let h = spec.hidden_size;
        Self {
            input: SequenceMask::sample(&[batch, N_FEATURES], rate, mode, rng),
            recurrent: SequenceMask::sample(&[batch, h], rate, mode, rng),
            output: SequenceMask::sample(&[batch, h], rate, mode, rng),
        }
    }

    pub fn identity() -> Self {
        Self {
            input: SequenceMask::identity(),
            recurrent: SequenceMask::identity(),
            output: SequenceMask::identity(),
        }
    }
}

pub struct LstmOutput {
    /// `Z` per step, each `[B, 1]`.
    pub outputs: Vec<Var>,
    pub h: Var,
    pub c: Var,
}

/// Unrolls the LSTM over `xs` (each `[B, 8]`), starting from zero state
/// unless `init` is given.
pub fn lstm_sequence(
    spec: &ModelSpec,
    g: &mut Graph,
    vars: &ParamVars,
    xs: &[Var],
    init: Option<(Var, Var)>,
    masks: &LstmMasks,
) -> Result<LstmOutput> {
    let first = *xs
        .first()
        .ok_or_else(|| LearnError::InvalidArgument("empty sequence".into()))?;
    let batch = g.shape(first)[0];
    let hs = spec.hidden_size;
    let gates = ["f", "i", "o", "c"];
    let w_parts: Vec<Var> = gates.iter().map(|k| p(vars, &format!("w_{k}"))).collect::<Result<_>>()?;
    let v_parts: Vec<Var> = gates.iter().map(|k| p(vars, &format!("v_{k}"))).collect::<Result<_>>()?;
    let b_parts: Vec<Var> = gates.iter().map(|k| p(vars, &format!("b_{k}"))).collect::<Result<_>>()?;
    let w_all = g.concat_cols(&w_parts)?;
    let v_all = g.concat_cols(&v_parts)?;
    let b_all = g.concat_cols(&b_parts)?;
    let w_z = p(vars, "w_z")?;
    let b_z = p(vars, "b_z")?;

    let (mut h, mut c) = match init {
        Some(state) => state,
        None => (
            g.constant(Tensor::zeros(&[batch, hs])),
            g.constant(Tensor::zeros(&[batch, hs])),
        ),
    };
    let mut outputs = Vec::with_capacity(xs.len());
    for &x in xs {
        let x = masks.input.apply(g, x)?;
        let h_in = masks.recurrent.apply(g, h)?;
        let xw = g.matmul(x, w_all)?;
        let hv = g.matmul(h_in, v_all)?;
        let pre = g.add(xw, hv)?;
        let pre = g.add(pre, b_all)?;
        let f_pre = g.slice_cols(pre, 0, hs)?;
        let i_pre = g.slice_cols(pre, hs, 2 * hs)?;
        let o_pre = g.slice_cols(pre, 2 * hs, 3 * hs)?;
        let c_pre = g.slice_cols(pre, 3 * hs, 4 * hs)?;
        let f = g.sigmoid(f_pre);
        let i = g.sigmoid(i_pre);
        let o = g.sigmoid(o_pre);
        let cand = g.tanh(c_pre);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
        let h_out = masks.output.apply(g, h)?;
        let z = affine(g, h_out, w_z, b_z)?;
        outputs.push(apply_head(g, z, spec.head));
    }
    Ok(LstmOutput { outputs, h, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(a: Architecture, head: OutputHead) -> ModelSpec {
        ModelSpec::new(a, 5, head, 0.0).unwrap()
    }

    #[test]
    fn zero_weights_give_head_of_zero() {
        for a in [Architecture::Linear, Architecture::Mlp, Architecture::WaveNet] {
            for (head, expect) in [(OutputHead::Tanh, 0.0), (OutputHead::Sigmoid, 0.5), (OutputHead::Linear, 0.0)] {
                let m = Model::zeros(spec(a, head));
                let w = m.spec.input_width();
                let z = m.predict_windows(vec![0.7; 3 * w], 3).unwrap();
                assert!(z.iter().all(|v| *v == expect));
            }
        }
    }

    #[test]
    fn linear_projection_picks_first_entry() {
        let mut m = Model::zeros(spec(Architecture::Linear, OutputHead::Linear));
        m.params.get_mut("w").unwrap().values_mut()[0] = 1.0;
        let mut x = vec![0.0; 48];
        x[0] = 0.3;
        x[5] = 9.0;
        assert_eq!(m.predict_windows(x, 1).unwrap(), vec![0.3]);
    }

    #[test]
    fn sigmoid_head_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let m = Model::init(spec(Architecture::Linear, OutputHead::Sigmoid), &mut rng);
            let x: Vec<f64> = (0..48).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z = m.predict_windows(x, 1).unwrap()[0];
            assert!(z > 0.0 && z < 1.0);
        }
    }

    #[test]
    fn wavenet_receptive_field_is_63_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::init(spec(Architecture::WaveNet, OutputHead::Linear), &mut rng);
        let base: Vec<f64> = (0..63 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z0 = m.predict_windows(base.clone(), 1).unwrap()[0];
        let mut oldest = base.clone();
        oldest[3] += 0.5;
        assert_ne!(m.predict_windows(oldest, 1).unwrap()[0], z0);
        let mut newest = base;
        newest[62 * 8 + 3] += 0.5;
        assert_ne!(m.predict_windows(newest, 1).unwrap()[0], z0);
    }

    #[test]
    fn saturated_gates_freeze_the_cell() {
        let s = spec(Architecture::Lstm, OutputHead::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Model::init(s, &mut rng);
        m.params.get_mut("b_f").unwrap().values_mut().iter_mut().for_each(|v| *v = 20.0);
        m.params.get_mut("b_i").unwrap().values_mut().iter_mut().for_each(|v| *v = -20.0);
        let mut state = LstmState::zeros(5);
        state.c = Tensor::matrix(1, 5, vec![0.3, -0.2, 0.1, 0.5, -0.4]).unwrap();
        let c0 = state.c.clone();
        for _ in 0..50 {
            let row: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            m.lstm_step(&row, &mut state).unwrap();
        }
        for (a, b) in state.c.values().iter().zip(c0.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sequence_matches_stepping() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::init(spec(Architecture::Lstm, OutputHead::Tanh), &mut rng);
        let rows: Vec<[f64; 8]> = (0..12).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let seq = m.predict_sequence(&rows).unwrap();
        let mut state = LstmState::zeros(5);
        for (r, z) in rows.iter().zip(&seq) {
            assert!((m.lstm_step(r, &mut state).unwrap() - z).abs() < 1e-14);
        }
        let mut later = rows.clone();
        later[8] = [5.0; 8];
        let changed = m.predict_sequence(&later).unwrap();
        assert_eq!(seq[..8], changed[..8]);
        assert_ne!(seq[8], changed[8]);
    }

    #[test]
    fn zero_lstm_stays_at_rest() {
        let m = Model::zeros(spec(Architecture::Lstm, OutputHead::Tanh));
        let mut state = LstmState::zeros(5);
        for k in 0..10 {
            let z = m.lstm_step(&[k as f64; 8], &mut state).unwrap();
            assert_eq!(z, 0.0);
            assert!(state.c.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Model::init(spec(Architecture::Mlp, OutputHead::Tanh), &mut rng);
        let dir = std::env::temp_dir().join(format!("dmn-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
