//! Post-hoc residual correction and subgrouping of corrected predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares line through the residuals `yhat - y` as a function of `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualFit {
    pub intercept: f64,
    pub slope: f64,
    pub fit_n: usize,
    /// Set when the fit is applied to the samples it was fitted on.
    #[serde(default)]
    pub in_sample: bool,
}

impl ResidualFit {
    pub const IDENTITY: ResidualFit = ResidualFit { intercept: 0.0, slope: 0.0, fit_n: 0, in_sample: false };
}

pub fn fit_residuals(y: &[f64], yhat: &[f64]) -> Result<ResidualFit> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < 2 {
        return Err(Error::ConstantLabels);
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mr = y.iter().zip(yhat).map(|(a, b)| b - a).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let dx = a - my;
        sxy += dx * ((b - a) - mr);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(Error::ConstantLabels);
    }
    let slope = sxy / sxx;
    Ok(ResidualFit { intercept: mr - slope * my, slope, fit_n: y.len(), in_sample: false })
}

/// `yhat_i - (intercept + slope * y_i)`.
pub fn correct(yhat: &[f64], y: &[f64], fit: &ResidualFit) -> Result<Vec<f64>> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(yhat.len(), y.len()));
    }
    Ok(yhat.iter().zip(y).map(|(p, a)| p - (fit.intercept + fit.slope * a)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subgroup {
    Younger,
    Neutral,
    Older,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubgroupCounts {
    pub younger: usize,
    pub neutral: usize,
    pub older: usize,
}

impl SubgroupCounts {
    pub fn total(&self) -> usize {
        self.younger + self.neutral + self.older
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAssignment {
    pub groups: Vec<Subgroup>,
    pub threshold: f64,
    pub counts: SubgroupCounts,
}

pub const DEFAULT_THRESHOLD: f64 = 10.0;

/// Younger when `corrected - y < -threshold`, older when it exceeds
/// `threshold`, neutral otherwise (the boundaries included).
pub fn assign_subgroups(y: &[f64], corrected: &[f64], threshold: f64) -> Result<SubgroupAssignment> {
    if y.len() != corrected.len() {
        return Err(Error::LengthMismatch(y.len(), corrected.len()));
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidConfig(format!("subgroup threshold must be positive, got {threshold}")));
    }
    let mut counts = SubgroupCounts::default();
    let groups = y
        .iter()
        .zip(corrected)
        .map(|(a, c)| {
            let d = c - a;
            if d < -threshold {
                counts.younger += 1;
                Subgroup::Younger
            } else if d > threshold {
                counts.older += 1;
                Subgroup::Older
            } else {
                counts.neutral += 1;
                Subgroup::Neutral
            }
        })
        .collect();
    Ok(SubgroupAssignment { groups, threshold, counts })
}
