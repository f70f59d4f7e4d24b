//! First- and second-order calibration metrics.
//!
//! Second-order calibration error (ECE-2) compares a model's variance
//! estimate against an unbiased estimate of its actual squared error,
//! binned by quantiles of the variance estimate. The squared-error
//! estimator needs at least two annotations per example and may be
//! negative; keeping the negative values is what makes it unbiased.

pub mod ranking;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::ProbVector;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 annotations, got {0}")]
    TooFewAnnotations(usize),
    #[error("need at least {bins} records for {bins} bins, got {n}")]
    TooFewRecords { n: usize, bins: usize },
    #[error("model assigns zero probability to an observed label {0}")]
    ZeroModelProbabilityOnObserved(usize),
    #[error("empty input")]
    EmptyInput,
}

/// Unbiased estimate of `(p_hat - p(y|x))^2` from `K >= 2` annotations:
/// `p_hat^2 - 2 p_hat |{i: y_i = y}| / K + |{(i,j): i != j, y_i = y_j = y}| / (K (K-1))`.
///
/// May be negative; callers must not clamp it.
pub fn sq_err_est(y: usize, p_hat: f64, annotations: &[usize]) -> Result<f64, EvalError> {
    let k = annotations.len();
    if k < 2 {
        return Err(EvalError::TooFewAnnotations(k));
    }
    let count = annotations.iter().filter(|&&a| a == y).count() as f64;
    let k = k as f64;
    let pairs = count * (count - 1.0);
    Ok(p_hat * p_hat - 2.0 * p_hat * count / k + pairs / (k * (k - 1.0)))
}

/// One quantile bin of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub count: usize,
    /// Mean of the predicted statistic in the bin.
    pub mean_predicted: f64,
    /// Mean of the realized statistic in the bin.
    pub mean_realized: f64,
}

/// A binned reliability summary for one statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReliability {
    pub statistic: String,
    pub bins: Vec<ReliabilityBin>,
    pub total: usize,
}

impl BinnedReliability {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("bin,lower_edge,upper_edge,count,mean_predicted,mean_realized\n");
        for (i, b) in self.bins.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i, b.lower_edge, b.upper_edge, b.count, b.mean_predicted, b.mean_realized
            ));
        }
        out
    }
}

/// Quantile-binned expected calibration error of `predicted` against
/// `realized`: sort by predicted value (stable, ties by original index),
/// split into `bins` equal-count bins, and average `|mean predicted -
/// mean realized|` weighted by bin size. `class_count` scales the result
/// so pooled-class inputs report a sum over classes rather than an
/// average.
fn quantile_ece(
    statistic: &str,
    records: &[(f64, f64)],
    bins: usize,
    class_count: usize,
) -> Result<(f64, BinnedReliability), EvalError> {
    let n = records.len();
    if n < bins {
        return Err(EvalError::TooFewRecords { n, bins });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .0
            .partial_cmp(&records[b].0)
            .expect("finite statistics")
            .then(a.cmp(&b))
    });
    let mut out_bins = Vec::with_capacity(bins);
    let mut total_err = 0.0;
    for bi in 0..bins {
        let start = bi * n / bins;
        let end = (bi + 1) * n / bins;
        let slice = &order[start..end];
        let mean_pred: f64 =
            slice.iter().map(|&i| records[i].0).sum::<f64>() / slice.len() as f64;
        let mean_real: f64 =
            slice.iter().map(|&i| records[i].1).sum::<f64>() / slice.len() as f64;
        total_err += slice.len() as f64 / n as f64 * (mean_pred - mean_real).abs();
        out_bins.push(ReliabilityBin {
            lower_edge: records[slice[0]].0,
            upper_edge: records[*slice.last().expect("nonempty bin")].0,
            count: slice.len(),
            mean_predicted: mean_pred,
            mean_realized: mean_real,
        });
    }
    let ece = total_err * class_count as f64;
    Ok((
        ece,
        BinnedReliability { statistic: statistic.to_string(), bins: out_bins, total: n },
    ))
}

/// ECE-2: records are `(v_hat, sq_err_est)` pairs, pooled across classes.
pub fn ece2(
    records: &[(f64, f64)],
    bins: usize,
    class_count: usize,
) -> Result<(f64, BinnedReliability), EvalError> {
    quantile_ece("ece2", records, bins, class_count)
}

/// ECE-1: records are `(p_hat, empirical frequency)` pairs.
pub fn ece1(
    records: &[(f64, f64)],
    bins: usize,
    class_count: usize,
) -> Result<(f64, BinnedReliability), EvalError> {
    quantile_ece("ece1", records, bins, class_count)
}

/// KL divergence from the empirical annotation distribution to the model:
/// `sum_y freq(y) (ln freq(y) - ln p_hat(y))`, with `0 ln 0 = 0`.
pub fn kl_to_empirical(p_hat: &ProbVector, annotations: &[usize]) -> Result<f64, EvalError> {
    if annotations.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let k = p_hat.len();
    let mut counts = vec![0usize; k];
    for &a in annotations {
        counts[a] += 1;
    }
    let n = annotations.len() as f64;
    let mut kl = 0.0;
    for (y, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let freq = c as f64 / n;
        let q = p_hat.get(y);
        if q <= 0.0 {
            return Err(EvalError::ZeroModelProbabilityOnObserved(y));
        }
        kl += freq * (freq.ln() - q.ln());
    }
    Ok(kl)
}

/// Bins confidences on `[0, 1]` into `bins` fixed-width cells and reports
/// the per-bin hallucination fraction (realized) against the bin's
/// confidence mean (predicted).
pub fn confidence_vs_hallucination(
    samples: &[(f64, bool)],
    bins: usize,
) -> Result<BinnedReliability, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut out_bins: Vec<ReliabilityBin> = (0..bins)
        .map(|i| ReliabilityBin {
            lower_edge: i as f64 / bins as f64,
            upper_edge: (i + 1) as f64 / bins as f64,
            count: 0,
            mean_predicted: 0.0,
            mean_realized: 0.0,
        })
        .collect();
    for &(c, halluc) in samples {
        let idx = ((c * bins as f64) as usize).min(bins - 1);
        let b = &mut out_bins[idx];
        b.count += 1;
        b.mean_predicted += c;
        b.mean_realized += f64::from(halluc);
    }
    for b in out_bins.iter_mut() {
        if b.count > 0 {
            b.mean_predicted /= b.count as f64;
            b.mean_realized /= b.count as f64;
        }
    }
    Ok(BinnedReliability {
        statistic: "confidence-vs-hallucination".into(),
        bins: out_bins,
        total: samples.len(),
    })
}
