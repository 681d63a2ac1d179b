//! Regression models built on the autodiff graph.
//!
//! [`Net1DLite`] is a small 1-D residual CNN:
//!
//! ```text
//! x (B, 1, L)
//!   -> stem conv (1 -> C) -> relu
//!   -> blocks: h = conv -> relu -> conv -> SE gate;  out = in + h
//!   -> mean over time -> dense (C -> 1) -> shift + scale * y
//! ```
//!
//! The SE gate squeezes each channel by its time average, passes it through
//! `dense (C -> C/r) -> relu -> dense (C/r -> C) -> sigmoid` and rescales the
//! channels. There is no activation after the skip addition, so a block whose
//! second convolution is all zeros is the identity.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// A named trainable tensor. `decay` marks weights that receive weight decay
/// (biases do not).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
}

/// A model mapping `(B, 1, L)` signals to `(B)` predictions.
pub trait Model {
    fn params(&self) -> &[Param];
    fn params_mut(&mut self) -> &mut [Param];
    fn input_len(&self) -> usize;

    /// Forward pass with parameters already bound to graph leaves, in the
    /// order of [`Model::params`].
    fn forward_bound(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<Var>;
}

/// Output of [`forward`]: the prediction node and the parameter leaves.
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

pub fn forward<M: Model + ?Sized>(model: &M, g: &mut Graph, x: Var) -> Result<Forward> {
    match g.shape(x) {
        &[_, 1, len] if len == model.input_len() => {}
        s => {
            return Err(Error::ShapeMismatch(format!(
                "expected input (batch, 1, {}), got {s:?}",
                model.input_len()
            )))
        }
    }
    let params: Vec<Var> = model.params().iter().map(|p| g.param(p.value.clone())).collect();
    let output = model.forward_bound(g, x, &params)?;
    if g.value(output).data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("model output"));
    }
    Ok(Forward { output, params })
}

/// Predictions for row-major `(N, L)` signals, evaluated in chunks.
pub fn predict<M: Model + ?Sized>(model: &M, signals: &[f64], batch_size: usize) -> Result<Vec<f64>> {
    let len = model.input_len();
    if len == 0 || !signals.len().is_multiple_of(len) {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form rows of length {len}",
            signals.len()
        )));
    }
    let mut out = Vec::with_capacity(signals.len() / len);
    for chunk in signals.chunks(batch_size.max(1) * len) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![chunk.len() / len, 1, len], chunk.to_vec())?);
        let fwd = forward(model, &mut g, x)?;
        out.extend_from_slice(g.value(fwd.output).data());
    }
    Ok(out)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches generated data")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub channels: usize,
    pub blocks: usize,
    pub kernel_size: usize,
    pub input_len: usize,
    pub se_reduction: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { channels: 16, blocks: 2, kernel_size: 7, input_len: 100, se_reduction: 4 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels == 0 {
            return bad("model.channels must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("model.kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.input_len < 2 {
            return bad(format!("model.input_len must be at least 2, got {}", self.input_len));
        }
        if self.se_reduction == 0 {
            return bad("model.se_reduction must be positive".into());
        }
        Ok(())
    }

    fn se_hidden(&self) -> usize {
        (self.channels / self.se_reduction).max(1)
    }
}

const PARAMS_PER_BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net1DLite {
    config: NetConfig,
    params: Vec<Param>,
    output_shift: f64,
    output_scale: f64,
}

impl Net1DLite {
    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with fan-in `f` is drawn from `U(-1/sqrt(f), 1/sqrt(f))`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = (config.channels, config.kernel_size);
        let hidden = config.se_hidden();
        let mut params = Vec::new();
        let mut layer = |name: String, w_shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let out = w_shape[0];
            params.push(Param { name: format!("{name}.weight"), value: uniform_tensor(rng, w_shape, bound), decay: true });
            params.push(Param { name: format!("{name}.bias"), value: uniform_tensor(rng, vec![out], bound), decay: false });
        };
        layer("stem".into(), vec![c, 1, k], k, &mut rng);
        for b in 0..config.blocks {
            layer(format!("block{b}.conv1"), vec![c, c, k], c * k, &mut rng);
            layer(format!("block{b}.conv2"), vec![c, c, k], c * k, &mut rng);
            layer(format!("block{b}.se_reduce"), vec![hidden, c], c, &mut rng);
            layer(format!("block{b}.se_expand"), vec![c, hidden], hidden, &mut rng);
        }
        layer("head".into(), vec![1, c], c, &mut rng);
        Ok(Self { config, params, output_shift: 0.0, output_scale: 1.0 })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Predictions are `shift + scale * head(x)`; the trainer sets these from
    /// the training-label mean and standard deviation.
    pub fn set_output_scaling(&mut self, shift: f64, scale: f64) {
        self.output_shift = shift;
        self.output_scale = scale;
    }

    pub fn output_scaling(&self) -> (f64, f64) {
        (self.output_shift, self.output_scale)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index_of(name).map(move |i| &mut self.params[i])
    }

    fn block(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let h = g.conv1d(x, p[0], p[1])?;
        let h = g.relu(h);
        let h = g.conv1d(h, p[2], p[3])?;
        let squeezed = g.mean_last(h)?;
        let z = g.dense(squeezed, p[4], p[5])?;
        let z = g.relu(z);
        let z = g.dense(z, p[6], p[7])?;
        let gate = g.sigmoid(z);
        let h = g.channel_scale(h, gate)?;
        g.add(x, h)
    }

    /// Channel gates of every block for input `x`, for inspection.
    pub fn se_gates(&self, signals: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let x = g.constant(signals.clone());
        let p: Vec<Var> = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        let h = g.conv1d(x, p[0], p[1])?;
        let mut h = g.relu(h);
        let mut gates = Vec::new();
        for b in 0..self.config.blocks {
            let q = &p[2 + b * PARAMS_PER_BLOCK..][..PARAMS_PER_BLOCK];
            let inner = g.conv1d(h, q[0], q[1])?;
            let inner = g.relu(inner);
            let inner = g.conv1d(inner, q[2], q[3])?;
            let s = g.mean_last(inner)?;
            let z = g.dense(s, q[4], q[5])?;
            let z = g.relu(z);
            let z = g.dense(z, q[6], q[7])?;
            let gate = g.sigmoid(z);
            gates.push(g.value(gate).clone());
            let inner = g.channel_scale(inner, gate)?;
            h = g.add(h, inner)?;
        }
        Ok(gates)
    }

    /// Runs a single residual block on `x: (B, C, L)` without the stem or head.
    pub fn block_output(&self, block: usize, x: &Tensor) -> Result<Tensor> {
        if block >= self.config.blocks {
            return Err(Error::InvalidConfig(format!("no block {block}")));
        }
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p: Vec<Var> = self.params[2 + block * PARAMS_PER_BLOCK..][..PARAMS_PER_BLOCK]
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect();
        let out = self.block(&mut g, xv, &p)?;
        Ok(g.value(out).clone())
    }
}

impl Model for Net1DLite {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn input_len(&self) -> usize {
        self.config.input_len
    }

    fn forward_bound(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let batch = g.shape(x)[0];
        let h = g.conv1d(x, p[0], p[1])?;
        let mut h = g.relu(h);
        for b in 0..self.config.blocks {
            h = self.block(g, h, &p[2 + b * PARAMS_PER_BLOCK..][..PARAMS_PER_BLOCK])?;
        }
        let pooled = g.mean_last(h)?;
        let head = 2 + self.config.blocks * PARAMS_PER_BLOCK;
        let y = g.dense(pooled, p[head], p[head + 1])?;
        let y = g.reshape(y, vec![batch])?;
        Ok(g.affine(y, self.output_shift, self.output_scale))
    }
}

/// `y = w . x + b` on the flattened signal; a one-layer baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegressor {
    input_len: usize,
    params: Vec<Param>,
}

impl LinearRegressor {
    pub fn new(input_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input_len as f64).sqrt();
        let params = vec![
            Param { name: "weight".into(), value: uniform_tensor(&mut rng, vec![1, input_len], bound), decay: true },
            Param { name: "bias".into(), value: uniform_tensor(&mut rng, vec![1], bound), decay: false },
        ];
        Self { input_len, params }
    }

    pub fn weight(&self) -> &[f64] {
        self.params[0].value.data()
    }

    pub fn bias(&self) -> f64 {
        self.params[1].value.data()[0]
    }
}

impl Model for LinearRegressor {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn forward_bound(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let batch = g.shape(x)[0];
        let flat = g.reshape(x, vec![batch, self.input_len])?;
        let y = g.dense(flat, p[0], p[1])?;
        g.reshape(y, vec![batch])
    }
}
