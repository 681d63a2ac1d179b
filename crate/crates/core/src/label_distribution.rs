//! Label-space discretization, kernel density estimation of the training
//! labels, the few-shot region, and expected-label construction.
//!
//! The expected labels are the multiset a perfectly calibrated predictor
//! would emit for a batch of `N` samples drawn from the label density:
//! bin `i` contributes `floor(N * p_i)` copies of its grid value, and the
//! remaining slots are handed out by largest remainder.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_REL_TOL: f64 = 1e-9;
const DENSITY_SUM_TOL: f64 = 1e-9;

/// An ascending, evenly spaced grid of label values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    values: Vec<f64>,
    bin_width: f64,
}

impl LabelSpace {
    /// Builds a space from explicit grid values, inferring the bin width.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 grid values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidLabelSpace(format!("non-finite grid value at {i}")));
        }
        let n = values.len();
        let bin_width = (values[n - 1] - values[0]) / (n - 1) as f64;
        if bin_width <= 0.0 {
            return Err(Error::InvalidLabelSpace("grid must be strictly increasing".into()));
        }
        for (i, pair) in values.windows(2).enumerate() {
            let gap = pair[1] - pair[0];
            if gap <= 0.0 {
                return Err(Error::InvalidLabelSpace(format!(
                    "grid not strictly increasing at {}",
                    i + 1
                )));
            }
            if (gap - bin_width).abs() > GRID_REL_TOL * bin_width {
                return Err(Error::InvalidLabelSpace(format!(
                    "uneven gap {gap} at {} (bin width {bin_width})",
                    i + 1
                )));
            }
        }
        Ok(Self { values, bin_width })
    }

    /// `n` grid points starting at `start`, spaced by `bin_width`.
    pub fn uniform(start: f64, bin_width: f64, n: usize) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) || !start.is_finite() {
            return Err(Error::InvalidLabelSpace(format!(
                "start {start} / bin width {bin_width} invalid"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidLabelSpace(format!("need at least 2 grid values, got {n}")));
        }
        let values = (0..n).map(|i| start + i as f64 * bin_width).collect();
        Ok(Self { values, bin_width })
    }

    /// Inclusive range `[lo, hi]` with the given bin width. `hi - lo` must be
    /// a whole number of bins.
    pub fn from_range(lo: f64, hi: f64, bin_width: f64) -> Result<Self> {
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidLabelSpace(format!("empty range [{lo}, {hi}]")));
        }
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::InvalidLabelSpace(format!("bin width {bin_width} invalid")));
        }
        let steps = (hi - lo) / bin_width;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 {
            return Err(Error::InvalidLabelSpace(format!(
                "range [{lo}, {hi}] is not a multiple of bin width {bin_width}"
            )));
        }
        Self::uniform(lo, bin_width, rounded as usize + 1)
    }

    /// Grid spanning `[min(labels) - pad, max(labels) + pad]`, with both ends
    /// snapped outward to multiples of `bin_width`.
    pub fn covering(labels: &[f64], pad: f64, bin_width: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyLabels { required: 1, got: 0 });
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLabel(i));
        }
        let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
        let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = ((min - pad) / bin_width).floor();
        let hi = ((max + pad) / bin_width).ceil();
        let n = ((hi - lo).round() as usize + 1).max(2);
        Self::uniform(lo * bin_width, bin_width, n)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the nearest grid point; values outside the grid clamp to the
    /// boundary bins. Exact midpoints round toward the upper bin.
    pub fn nearest_bin(&self, value: f64) -> usize {
        let pos = ((value - self.values[0]) / self.bin_width).round();
        if pos.is_nan() || pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.values.len() - 1)
        }
    }
}

/// KDE bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidth {
    /// Silverman's rule of thumb, `1.06 * sd * n^(-1/5)`.
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Value(f64),
    Keyword(String),
}

impl TryFrom<BandwidthRepr> for Bandwidth {
    type Error = String;

    fn try_from(repr: BandwidthRepr) -> std::result::Result<Self, String> {
        match repr {
            BandwidthRepr::Value(h) if h > 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(h)),
            BandwidthRepr::Value(h) => Err(format!("bandwidth must be positive, got {h}")),
            BandwidthRepr::Keyword(k) if k == "auto" => Ok(Bandwidth::Auto),
            BandwidthRepr::Keyword(k) => Err(format!("expected \"auto\" or a number, got {k:?}")),
        }
    }
}

impl From<Bandwidth> for BandwidthRepr {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Auto => BandwidthRepr::Keyword("auto".into()),
            Bandwidth::Fixed(h) => BandwidthRepr::Value(h),
        }
    }
}

/// Silverman's rule-of-thumb bandwidth using the sample (n - 1) standard
/// deviation.
pub fn silverman_bandwidth(labels: &[f64]) -> Result<f64> {
    let n = labels.len();
    if n < 3 {
        return Err(Error::EmptyLabels { required: 3, got: n });
    }
    let mean = labels.iter().sum::<f64>() / n as f64;
    let var = labels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(1.06 * sd * (n as f64).powf(-0.2))
}

/// Per-bin probabilities over a [`LabelSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDensity {
    space: LabelSpace,
    probs: Vec<f64>,
}

impl LabelDensity {
    pub fn new(space: LabelSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(Error::LengthMismatch(probs.len(), space.len()));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDensity(format!("probability {} at bin {i}", probs[i])));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DENSITY_SUM_TOL {
            return Err(Error::InvalidDensity(format!("probabilities sum to {total}")));
        }
        Ok(Self { space, probs })
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of the bin nearest to `value`.
    pub fn prob_at(&self, value: f64) -> f64 {
        self.probs[self.space.nearest_bin(value)]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Tab-separated text: a `value\tprobability` header, then one row per
    /// bin. Numbers are written in plain decimal with 17 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("value\tprobability\n");
        for (v, p) in self.space.values().iter().zip(&self.probs) {
            let _ = writeln!(out, "{}\t{}", fmt_decimal(*v), fmt_decimal(*p));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::InvalidDensity(reason);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "value\tprobability" => {}
            other => return Err(bad(format!("unexpected header {other:?}"))),
        }
        let mut values = Vec::new();
        let mut probs = Vec::new();
        for (row, line) in lines.enumerate() {
            let mut cols = line.split('\t');
            let (Some(v), Some(p), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(bad(format!("row {row}: expected two columns")));
            };
            values.push(v.trim().parse::<f64>().map_err(|e| bad(format!("row {row}: {e}")))?);
            probs.push(p.trim().parse::<f64>().map_err(|e| bad(format!("row {row}: {e}")))?);
        }
        Self::new(LabelSpace::new(values)?, probs)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

/// Plain decimal rendering with at least 17 significant digits, never using
/// an exponent.
pub(crate) fn fmt_decimal(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:?}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (16 - magnitude).max(1) as usize;
    format!("{v:.decimals$}")
}

/// Gaussian KDE of `labels` evaluated at every grid point of `space`, then
/// renormalized over the grid.
pub fn estimate_density(
    labels: &[f64],
    space: &LabelSpace,
    bandwidth: Bandwidth,
) -> Result<LabelDensity> {
    if labels.len() < 2 {
        return Err(Error::EmptyLabels { required: 2, got: labels.len() });
    }
    if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLabel(i));
    }
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(labels)?,
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::InvalidBandwidth(h)),
    };
    let inv_two_h2 = 1.0 / (2.0 * h * h);
    let raw: Vec<f64> = space
        .values()
        .iter()
        .map(|&g| labels.iter().map(|&x| (-(g - x) * (g - x) * inv_two_h2).exp()).sum())
        .collect();
    let total: f64 = raw.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidDensity("no kernel mass falls on the grid".into()));
    }
    let probs = raw.into_iter().map(|r| r / total).collect();
    LabelDensity::new(space.clone(), probs)
}

/// Bins whose probability is below one third of the peak bin probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    space: LabelSpace,
    few_shot: Vec<bool>,
    threshold: f64,
}

impl RegionMask {
    pub fn few_shot(&self) -> &[bool] {
        &self.few_shot
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    /// Whether `value` falls in a few-shot bin (nearest-bin lookup).
    pub fn contains(&self, value: f64) -> bool {
        self.few_shot[self.space.nearest_bin(value)]
    }

    pub fn any(&self) -> bool {
        self.few_shot.iter().any(|&b| b)
    }
}

pub fn few_shot_region(density: &LabelDensity) -> RegionMask {
    let max = density.probs().iter().copied().fold(0.0, f64::max);
    let threshold = max / 3.0;
    RegionMask {
        space: density.space().clone(),
        few_shot: density.probs().iter().map(|&p| p < threshold).collect(),
        threshold,
    }
}

/// A sorted multiset of grid values of a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLabels {
    values: Vec<f64>,
}

impl ExpectedLabels {
    /// Wraps an already ascending sequence, e.g. one read back from disk.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLabel(i));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidDensity("expected labels must be ascending".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-bin counts `floor(n * p_i)`, topped up to exactly `n` by giving one
/// extra slot to the bins with the largest fractional parts (ties go to the
/// lower grid index).
pub fn expected_counts(density: &LabelDensity, n: usize) -> Vec<usize> {
    let scaled: Vec<f64> = density.probs().iter().map(|&p| n as f64 * p).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainder = n.saturating_sub(assigned);
    if remainder > 0 {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = scaled[a] - scaled[a].floor();
            let fb = scaled[b] - scaled[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if remainder == 0 {
                break;
            }
            counts[i] += 1;
            remainder -= 1;
        }
    }
    counts
}

pub fn expected_labels(density: &LabelDensity, n: usize) -> ExpectedLabels {
    let counts = expected_counts(density, n);
    let mut values = Vec::with_capacity(n);
    for (&v, &c) in density.space().values().iter().zip(&counts) {
        values.extend(std::iter::repeat_n(v, c));
    }
    ExpectedLabels { values }
}
