//! Differentiable sorting by quadratic-regularized projection onto the
//! permutahedron.
//!
//! For descending order, the soft sort of `x` is the Euclidean projection of
//! `rho / epsilon` onto the permutahedron of `x`, where `rho = (n, n-1, .., 1)`.
//! The projection reduces to one isotonic regression:
//!
//! ```text
//! w   = sort_desc(x)
//! v   = isotonic_nonincreasing(rho / epsilon - w)      (pool adjacent violators)
//! out = rho / epsilon - v
//! ```
//!
//! Inside a pool `B` the output is `mean_B(w) + (rho_i - mean_B(rho)) / epsilon`,
//! so unpooled coordinates reproduce the hard sort exactly. Pooling starts when
//! a gap between consecutive sorted values exceeds `1 / epsilon`; as
//! `epsilon -> 0` the operator converges to the hard sort. Ascending order is
//! `-soft_sort_desc(-x)`.
//!
//! The Jacobian with respect to the sorted inputs is block diagonal with
//! `1/k` entries on each pool of size `k`, so the vector-Jacobian product is a
//! pool-wise average of the upstream gradient scattered back through the
//! sorting permutation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftSortConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub direction: Direction,
}

impl Default for SoftSortConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, direction: Direction::Ascending }
    }
}

impl SoftSortConfig {
    pub fn new(epsilon: f64, direction: Direction) -> Result<Self> {
        let cfg = Self { epsilon, direction };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidEpsilon(self.epsilon))
        }
    }
}

/// Forward result plus what the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct SoftSortTrace {
    pub output: Vec<f64>,
    /// `perm[j]` is the input index placed at sorted position `j`.
    perm: Vec<usize>,
    /// Half-open ranges of sorted positions that share one gradient average:
    /// isotonic pools merged with runs of tied inputs.
    groups: Vec<(usize, usize)>,
}

/// Pool-adjacent-violators fit of a non-increasing sequence. Returns the
/// half-open index ranges of the pools; the fitted value of each pool is the
/// mean of `y` over it.
pub fn isotonic_nonincreasing_pools(y: &[f64]) -> Vec<(usize, usize)> {
    // (start, end, sum)
    let mut stack: Vec<(usize, usize, f64)> = Vec::with_capacity(y.len());
    for (i, &yi) in y.iter().enumerate() {
        let mut block = (i, i + 1, yi);
        while let Some(&(s, e, sum)) = stack.last() {
            let prev_mean = sum / (e - s) as f64;
            let cur_mean = block.2 / (block.1 - block.0) as f64;
            if prev_mean < cur_mean {
                stack.pop();
                block = (s, block.1, sum + block.2);
            } else {
                break;
            }
        }
        stack.push(block);
    }
    stack.into_iter().map(|(s, e, _)| (s, e)).collect()
}

/// Isotonic (non-increasing) least-squares fit of `y`.
pub fn isotonic_nonincreasing(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for (s, e) in isotonic_nonincreasing_pools(y) {
        let mean = y[s..e].iter().sum::<f64>() / (e - s) as f64;
        out[s..e].fill(mean);
    }
    out
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteInput(i)),
        None => Ok(()),
    }
}

pub(crate) fn soft_sort_traced(x: &[f64], cfg: &SoftSortConfig) -> Result<SoftSortTrace> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_finite(x)?;
    let n = x.len();
    let sign = match cfg.direction {
        Direction::Descending => 1.0,
        Direction::Ascending => -1.0,
    };
    // Work on s = sign * x so the core is always the descending case.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| (sign * x[b]).total_cmp(&(sign * x[a])).then(a.cmp(&b)));
    let w: Vec<f64> = perm.iter().map(|&i| sign * x[i]).collect();
    let inv_eps = 1.0 / cfg.epsilon;
    let rho = |i: usize| (n - i) as f64;
    let y: Vec<f64> = (0..n).map(|i| rho(i) * inv_eps - w[i]).collect();
    let pools = isotonic_nonincreasing_pools(&y);

    let mut output = vec![0.0; n];
    for &(s, e) in &pools {
        if e - s == 1 {
            output[s] = sign * w[s];
            continue;
        }
        let k = (e - s) as f64;
        let w_mean = w[s..e].iter().sum::<f64>() / k;
        let rho_mean = n as f64 - (s + e - 1) as f64 / 2.0;
        for (i, out) in output.iter_mut().enumerate().take(e).skip(s) {
            *out = sign * (w_mean + (rho(i) - rho_mean) * inv_eps);
        }
    }

    // Ties share their gradient: central differences at a tie see the average
    // of the two slots the tied entries can occupy.
    let mut groups: Vec<(usize, usize)> = Vec::with_capacity(pools.len());
    for (s, e) in pools {
        match groups.last_mut() {
            Some(last) if w[last.1 - 1] == w[s] => last.1 = e,
            _ => groups.push((s, e)),
        }
    }
    Ok(SoftSortTrace { output, perm, groups })
}

impl SoftSortTrace {
    pub(crate) fn vjp(&self, upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; upstream.len()];
        for &(s, e) in &self.groups {
            let mean = upstream[s..e].iter().sum::<f64>() / (e - s) as f64;
            for &i in &self.perm[s..e] {
                grad[i] = mean;
            }
        }
        grad
    }
}

/// Regularized sort of `x` in the configured direction.
pub fn soft_sort(x: &[f64], cfg: &SoftSortConfig) -> Result<Vec<f64>> {
    Ok(soft_sort_traced(x, cfg)?.output)
}

/// Vector-Jacobian product `upstream^T * d soft_sort(x) / dx`.
pub fn soft_sort_vjp(x: &[f64], upstream: &[f64], cfg: &SoftSortConfig) -> Result<Vec<f64>> {
    if upstream.len() != x.len() {
        return Err(Error::LengthMismatch(x.len(), upstream.len()));
    }
    check_finite(upstream)?;
    Ok(soft_sort_traced(x, cfg)?.vjp(upstream))
}

/// Exact sort in the given direction; used for evaluation-time metrics.
pub fn hard_sort(x: &[f64], direction: Direction) -> Vec<f64> {
    let mut v = x.to_vec();
    match direction {
        Direction::Ascending => v.sort_by(f64::total_cmp),
        Direction::Descending => v.sort_by(|a, b| b.total_cmp(a)),
    }
    v
}
