//! Mini-batch training with Adam, decoupled weight decay and a per-epoch
//! cosine learning-rate schedule.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::label_distribution::{expected_labels, ExpectedLabels, LabelDensity};
use crate::loss::{loss_terms, LossConfig};
use crate::nn::{forward, Model, Param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 256, epochs: 50, lr: 3e-3, weight_decay: 1e-4, seed: 0, loss: LossConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        self.loss.validate()
    }
}

/// `base * 0.5 * (1 + cos(pi * epoch / epochs))`.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    /// One update. Weight decay is applied to the parameter directly,
    /// `p -= lr * (adam_direction + weight_decay * p)`, and skipped for
    /// parameters with `decay == false`.
    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f64>], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let wd = if p.decay { weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                *w -= lr * (update + wd * *w);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted means over the epoch's batches.
    pub loss: f64,
    pub plain: f64,
    pub dist: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch\tlr\tloss\tplain\tdist";

impl EpochLog {
    pub fn tsv_row(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.epoch, self.lr, self.loss, self.plain, self.dist)
    }
}

/// Trains `model` in place on row-major `(N, L)` signals. Batches are drawn
/// from a seeded per-epoch shuffle; the expected labels of each batch come
/// from the global `density` and the batch size.
pub fn train<M: Model + ?Sized>(
    model: &mut M,
    signals: &[f64],
    labels: &[f64],
    cfg: &TrainConfig,
    density: &LabelDensity,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let len = model.input_len();
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if signals.len() != n * len {
        return Err(Error::ShapeMismatch(format!(
            "{} signal values for {n} labels of length {len}",
            signals.len()
        )));
    }
    // stream 1 keeps the shuffle independent of a model initialized from the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(model.params());
    let mut expected_cache: HashMap<usize, ExpectedLabels> = HashMap::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_plain, mut sum_dist) = (0.0, 0.0, 0.0);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let b = idx.len();
            let mut x = Vec::with_capacity(b * len);
            for &i in idx {
                x.extend_from_slice(&signals[i * len..(i + 1) * len]);
            }
            let targets: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            let expected = expected_cache.entry(b).or_insert_with(|| expected_labels(density, b));

            let mut g = Graph::new();
            let xv = g.constant(Tensor::new(vec![b, 1, len], x)?);
            let fwd = forward(&*model, &mut g, xv).map_err(|e| match e {
                Error::NonFiniteActivation(_) => Error::DivergenceDetected { epoch, batch, loss: f64::NAN },
                other => other,
            })?;
            let terms = loss_terms(&mut g, fwd.output, &targets, expected, &cfg.loss)?;
            let total = g.value(terms.total).data()[0];
            if !total.is_finite() {
                return Err(Error::DivergenceDetected { epoch, batch, loss: total });
            }
            g.backward(terms.total)?;
            let grads: Vec<Vec<f64>> = fwd.params.iter().map(|&p| g.grad_or_zeros(p)).collect();
            adam.step(model.params_mut(), &grads, lr, cfg.weight_decay);

            sum_total += total * b as f64;
            sum_plain += g.value(terms.plain).data()[0] * b as f64;
            sum_dist += g.value(terms.dist).data()[0] * b as f64;
        }
        log.push(EpochLog {
            epoch,
            lr,
            loss: sum_total / n as f64,
            plain: sum_plain / n as f64,
            dist: sum_dist / n as f64,
        });
    }
    Ok(log)
}
