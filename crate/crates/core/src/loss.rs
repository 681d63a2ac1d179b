//! Training objectives.
//!
//! The distribution term compares the soft-sorted batch predictions with the
//! expected labels of the same batch size; the total objective adds it to
//! the ordinary per-sample error with weight `lambda`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::label_distribution::ExpectedLabels;
use crate::softsort::{Direction, SoftSortConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMetric {
    #[default]
    Mae,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the distribution term; 0 gives the plain objective.
    pub lambda: f64,
    pub base_metric: BaseMetric,
    /// Soft-sort regularization strength.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0, base_metric: BaseMetric::Mae, epsilon: 1.0 }
    }
}

impl LossConfig {
    pub fn plain(base_metric: BaseMetric) -> Self {
        Self { lambda: 0.0, base_metric, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        self.soft_sort().validate()
    }

    fn soft_sort(&self) -> SoftSortConfig {
        SoftSortConfig { epsilon: self.epsilon, direction: Direction::Ascending }
    }
}

/// Graph handles for the pieces of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub plain: Var,
    pub dist: Var,
}

fn numel_1d(g: &Graph, preds: Var) -> Result<usize> {
    match g.shape(preds) {
        [n] => Ok(*n),
        s => Err(Error::ShapeMismatch(format!("predictions must be 1-D, got {s:?}"))),
    }
}

fn reduce(g: &mut Graph, diff: Var, metric: BaseMetric) -> Var {
    let e = match metric {
        BaseMetric::Mae => g.abs(diff),
        BaseMetric::Mse => g.square(diff),
    };
    g.mean(e)
}

/// Mean per-sample error between predictions and targets.
pub fn plain_loss(g: &mut Graph, preds: Var, targets: &[f64], metric: BaseMetric) -> Result<Var> {
    let n = numel_1d(g, preds)?;
    if n != targets.len() {
        return Err(Error::LengthMismatch(n, targets.len()));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let diff = g.sub_const(preds, targets)?;
    Ok(reduce(g, diff, metric))
}

/// Error between the ascending soft sort of the predictions and the expected
/// labels.
pub fn dist_loss(g: &mut Graph, preds: Var, expected: &ExpectedLabels, cfg: &LossConfig) -> Result<Var> {
    let n = numel_1d(g, preds)?;
    if n != expected.len() {
        return Err(Error::LengthMismatch(n, expected.len()));
    }
    let sorted = g.soft_sort(preds, &cfg.soft_sort())?;
    let diff = g.sub_const(sorted, expected.values())?;
    Ok(reduce(g, diff, cfg.base_metric))
}

pub fn loss_terms(
    g: &mut Graph,
    preds: Var,
    targets: &[f64],
    expected: &ExpectedLabels,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let n = numel_1d(g, preds)?;
    if n != targets.len() {
        return Err(Error::LengthMismatch(n, targets.len()));
    }
    let plain = plain_loss(g, preds, targets, cfg.base_metric)?;
    let dist = dist_loss(g, preds, expected, cfg)?;
    let weighted = g.scale(dist, cfg.lambda);
    let total = g.add(plain, weighted)?;
    Ok(LossTerms { total, plain, dist })
}

/// `plain_loss + lambda * dist_loss`.
pub fn total_loss(
    g: &mut Graph,
    preds: Var,
    targets: &[f64],
    expected: &ExpectedLabels,
    cfg: &LossConfig,
) -> Result<Var> {
    Ok(loss_terms(g, preds, targets, expected, cfg)?.total)
}
