//! Regression and imbalance-aware metrics.
//!
//! Weighted metrics weight sample `i` by `P(y_i) / mean_j P(y_j)`, with
//! probabilities read from the nearest grid bin of the true label. The
//! overlap ratio compares per-bin counts of labels and predictions;
//! predictions outside the grid are clamped to the boundary bins.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_distribution::{LabelDensity, LabelSpace, RegionMask};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson_r(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::ConstantInput);
    }
    let (my, mp) = (mean(y), mean(yhat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (b - a).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Per-sample weights `P(y_i) / mean_j P(y_j)`.
pub fn sample_weights(y: &[f64], density: &LabelDensity) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p: Vec<f64> = y.iter().map(|&v| density.prob_at(v)).collect();
    let m = mean(&p);
    if m <= 0.0 {
        return Err(Error::ZeroMeanProbability);
    }
    Ok(p.into_iter().map(|v| v / m).collect())
}

pub fn weighted_mae(y: &[f64], yhat: &[f64], density: &LabelDensity) -> Result<f64> {
    check_pair(y, yhat)?;
    let w = sample_weights(y, density)?;
    Ok(y.iter().zip(yhat).zip(&w).map(|((a, b), w)| w * (b - a).abs()).sum::<f64>() / y.len() as f64)
}

/// Root mean of the squared weighted errors `((yhat_i - y_i) * w_i)^2`; the
/// weight enters squared.
pub fn weighted_rmse(y: &[f64], yhat: &[f64], density: &LabelDensity) -> Result<f64> {
    check_pair(y, yhat)?;
    let w = sample_weights(y, density)?;
    let s: f64 = y.iter().zip(yhat).zip(&w).map(|((a, b), w)| ((b - a) * w).powi(2)).sum();
    Ok((s / y.len() as f64).sqrt())
}

/// Per-bin counts of `values`, nearest bin with clamping.
pub fn bin_counts(values: &[f64], space: &LabelSpace) -> Vec<usize> {
    let mut counts = vec![0; space.len()];
    for &v in values {
        counts[space.nearest_bin(v)] += 1;
    }
    counts
}

/// `sum min(a, b) / sum max(a, b)` over the bins where `include` is true.
/// Zero when no bin has any count.
pub fn overlap_of_counts(a: &[usize], b: &[usize], include: impl Fn(usize) -> bool) -> f64 {
    let (mut lo, mut hi) = (0usize, 0usize);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if include(i) {
            lo += x.min(y);
            hi += x.max(y);
        }
    }
    if hi == 0 {
        0.0
    } else {
        lo as f64 / hi as f64
    }
}

pub fn overlap_ratio(y: &[f64], yhat: &[f64], space: &LabelSpace) -> Result<f64> {
    if y.is_empty() || yhat.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(overlap_of_counts(&bin_counts(y, space), &bin_counts(yhat, space), |_| true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Overall,
    FewShot,
    ManyShot,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Overall, Region::FewShot, Region::ManyShot];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Overall => "overall",
            Region::FewShot => "few_shot",
            Region::ManyShot => "many_shot",
        }
    }
}

/// Metrics for one region. `pearson_r` is absent when either side is
/// constant within the region; the ratio fields are absent when the overlap
/// ratio is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub region: Region,
    pub n: usize,
    pub pearson_r: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub weighted_mae: f64,
    pub weighted_rmse: f64,
    pub overlap_ratio: f64,
    pub mae_over_or: Option<f64>,
    pub rmse_over_or: Option<f64>,
}

pub const TSV_HEADER: &str =
    "region\tn\tpearson_r\tmae\trmse\tweighted_mae\tweighted_rmse\toverlap_ratio\tmae_over_or\trmse_over_or";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl EvalReport {
    /// One `key = value` line per field; absent values print as `NA`.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "region = {}", self.region.as_str());
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "pearson_r = {}", opt(self.pearson_r));
        let _ = writeln!(s, "mae = {}", self.mae);
        let _ = writeln!(s, "rmse = {}", self.rmse);
        let _ = writeln!(s, "weighted_mae = {}", self.weighted_mae);
        let _ = writeln!(s, "weighted_rmse = {}", self.weighted_rmse);
        let _ = writeln!(s, "overlap_ratio = {}", self.overlap_ratio);
        let _ = writeln!(s, "mae_over_or = {}", opt(self.mae_over_or));
        let _ = writeln!(s, "rmse_over_or = {}", opt(self.rmse_over_or));
        s
    }

    /// Tab-separated row matching [`TSV_HEADER`].
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.region.as_str(),
            self.n,
            opt(self.pearson_r),
            self.mae,
            self.rmse,
            self.weighted_mae,
            self.weighted_rmse,
            self.overlap_ratio,
            opt(self.mae_over_or),
            opt(self.rmse_over_or),
        )
    }
}

fn region_report(
    region: Region,
    y: &[f64],
    yhat: &[f64],
    density: &LabelDensity,
    bins: impl Fn(usize) -> bool,
) -> Result<EvalReport> {
    let space = density.space();
    let or = overlap_of_counts(&bin_counts(y, space), &bin_counts(yhat, space), bins);
    let mae = mae(y, yhat)?;
    let rmse = rmse(y, yhat)?;
    let pearson_r = match pearson_r(y, yhat) {
        Ok(r) => Some(r),
        Err(Error::ConstantInput) => None,
        Err(e) => return Err(e),
    };
    let ratio = |v: f64| (or > 0.0).then(|| v / or);
    Ok(EvalReport {
        region,
        n: y.len(),
        pearson_r,
        mae,
        rmse,
        weighted_mae: weighted_mae(y, yhat, density)?,
        weighted_rmse: weighted_rmse(y, yhat, density)?,
        overlap_ratio: or,
        mae_over_or: ratio(mae),
        rmse_over_or: ratio(rmse),
    })
}

/// Overall, few-shot and many-shot reports, in that order. Region membership
/// follows the true label; a region with no samples is left out. Each
/// region's overlap ratio counts only that region's bins.
pub fn evaluate(y: &[f64], yhat: &[f64], density: &LabelDensity, mask: &RegionMask) -> Result<Vec<EvalReport>> {
    check_pair(y, yhat)?;
    if mask.space().len() != density.space().len() {
        return Err(Error::LengthMismatch(mask.space().len(), density.space().len()));
    }
    let few = mask.few_shot();
    let mut reports = vec![region_report(Region::Overall, y, yhat, density, |_| true)?];
    for (region, want) in [(Region::FewShot, true), (Region::ManyShot, false)] {
        let (ys, ps): (Vec<f64>, Vec<f64>) =
            y.iter().zip(yhat).filter(|(v, _)| mask.contains(**v) == want).map(|(a, b)| (*a, *b)).unzip();
        if ys.is_empty() {
            continue;
        }
        reports.push(region_report(region, &ys, &ps, density, |i| few[i] == want)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_distribution::few_shot_region;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pearson_hand_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!(close(pearson_r(&y, &[2.0, 1.0, 4.0, 3.0]).unwrap(), 0.6));
        assert!(close(pearson_r(&y, &y).unwrap(), 1.0));
        assert!(close(pearson_r(&y, &[-1.0, -2.0, -3.0, -4.0]).unwrap(), -1.0));
        assert!(matches!(pearson_r(&y, &[1.0; 4]), Err(Error::ConstantInput)));
        assert!(matches!(pearson_r(&[1.0], &[1.0]), Err(Error::ConstantInput)));
    }

    #[test]
    fn mae_rmse_hand_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert!(close(rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5f64.sqrt()));
        assert_eq!(mae(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn weighted_mae_hand_case() {
        // P = 0.2 at label 0, 0.4 at label 1
        let space = LabelSpace::uniform(0.0, 1.0, 3).unwrap();
        let d = LabelDensity::new(space, vec![0.2, 0.4, 0.4]).unwrap();
        let v = weighted_mae(&[0.0, 1.0], &[1.0, 3.0], &d).unwrap();
        assert!(close(v, 5.0 / 3.0));
        // (1 * 2/3)^2 + (2 * 4/3)^2 = 4/9 + 64/9
        let r = weighted_rmse(&[0.0, 1.0], &[1.0, 3.0], &d).unwrap();
        assert!(close(r, (68.0f64 / 18.0).sqrt()));
    }

    #[test]
    fn weighted_equals_plain_under_uniform_density() {
        let space = LabelSpace::uniform(0.0, 1.0, 4).unwrap();
        let d = LabelDensity::new(space, vec![0.25; 4]).unwrap();
        let y = [0.0, 1.0, 2.0, 3.0, 1.0];
        let p = [0.5, 2.0, 1.0, 3.5, -1.0];
        assert!(close(weighted_mae(&y, &p, &d).unwrap(), mae(&y, &p).unwrap()));
        assert!(close(weighted_rmse(&y, &p, &d).unwrap(), rmse(&y, &p).unwrap()));
    }

    #[test]
    fn zero_mean_probability_is_reported() {
        let space = LabelSpace::uniform(0.0, 1.0, 3).unwrap();
        let d = LabelDensity::new(space, vec![0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(weighted_mae(&[0.0], &[1.0], &d), Err(Error::ZeroMeanProbability)));
    }

    #[test]
    fn overlap_hand_cases() {
        let space = LabelSpace::uniform(0.0, 1.0, 2).unwrap();
        // O = [2, 3], predicted = [3, 2]
        let y = [0.0, 0.0, 1.0, 1.0, 1.0];
        let p = [0.0, 0.0, 0.0, 1.0, 1.0];
        assert!(close(overlap_ratio(&y, &p, &space).unwrap(), 2.0 / 3.0));
        assert_eq!(overlap_ratio(&y, &y, &space).unwrap(), 1.0);
        assert_eq!(overlap_ratio(&[0.0], &[1.0], &space).unwrap(), 0.0);
        // clamped outside the grid
        assert_eq!(overlap_ratio(&[1.0], &[50.0], &space).unwrap(), 1.0);
    }

    fn peaked() -> LabelDensity {
        let space = LabelSpace::uniform(0.0, 1.0, 4).unwrap();
        LabelDensity::new(space, vec![0.05, 0.6, 0.3, 0.05]).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let d = peaked();
        let mask = few_shot_region(&d);
        let y = [0.0, 1.0, 1.0, 2.0, 3.0, 1.0];
        let reports = evaluate(&y, &y, &d, &mask).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert_eq!(r.mae, 0.0);
            assert_eq!(r.rmse, 0.0);
            assert_eq!(r.weighted_mae, 0.0);
            assert_eq!(r.overlap_ratio, 1.0);
            assert!(close(r.pearson_r.unwrap(), 1.0));
        }
        assert_eq!(reports[1].n, 2);
        assert_eq!(reports[2].n, 4);
    }

    #[test]
    fn empty_few_shot_region_is_absent() {
        let space = LabelSpace::uniform(0.0, 1.0, 3).unwrap();
        let d = LabelDensity::new(space, vec![0.3, 0.4, 0.3]).unwrap();
        let mask = few_shot_region(&d);
        let y = [0.0, 1.0, 2.0];
        let p = [0.5, 1.5, 1.0];
        let reports = evaluate(&y, &p, &d, &mask).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[1].region, Region::ManyShot);
        assert_eq!(reports[0].mae, reports[1].mae);
        assert_eq!(reports[0].overlap_ratio, reports[1].overlap_ratio);
    }

    #[test]
    fn region_overlap_counts_only_region_bins() {
        let d = peaked();
        let mask = few_shot_region(&d);
        // both few-shot samples predicted into many-shot bins
        let y = [0.0, 3.0, 1.0, 2.0];
        let p = [1.0, 2.0, 1.0, 2.0];
        let reports = evaluate(&y, &p, &d, &mask).unwrap();
        assert_eq!(reports[1].region, Region::FewShot);
        assert_eq!(reports[1].overlap_ratio, 0.0);
        assert_eq!(reports[1].mae_over_or, None);
        assert_eq!(reports[2].overlap_ratio, 1.0);
    }

    #[test]
    fn record_and_row_formats() {
        let d = peaked();
        let r = evaluate(&[1.0, 2.0], &[1.0, 2.0], &d, &few_shot_region(&d)).unwrap()[0];
        let rec = r.to_record();
        assert!(rec.starts_with("region = overall\nn = 2\n"));
        assert_eq!(rec.lines().count(), 10);
        assert_eq!(r.tsv_row().split('\t').count(), TSV_HEADER.split('\t').count());
    }
}
