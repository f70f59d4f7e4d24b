//! Conservative adjustment of a variance estimator from paired data.
//!
//! Given a calibration set of `(x, y1, y2)` with binary responses drawn
//! i.i.d. from the unknown `p(Y|X)`, the product of residuals
//! `(y1 - p_hat)(y2 - p_hat)` is an unbiased estimate of the squared error
//! `(p(1|x) - p_hat)^2`. Dividing by the floored variance estimate and
//! averaging yields a statistic whose mean upper-bounds the error/variance
//! ratio; a Hoeffding interval on that mean gives an inflation factor
//! `gamma` that makes Chebyshev-style intervals valid with no calibration
//! assumptions at all.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Interval;
use crate::util::{parallel_map_indexed, tree_sum};

#[derive(Debug, Error, PartialEq)]
pub enum DistFreeError {
    #[error("epsilon = {0} must be positive")]
    InvalidEpsilon(f64),
    #[error("alpha = {0} must lie strictly inside (0, 1)")]
    InvalidAlpha(f64),
    #[error("beta = {0} must lie strictly inside (0, 1)")]
    InvalidBeta(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("score {value} falls outside [-1/eps, 1/eps] = [{lo}, {hi}]")]
    ScoreOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("p_hat = {0} must lie in [0, 1]")]
    InvalidPHat(f64),
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
}

/// One calibration record with the model already applied: predictions
/// plus the paired binary responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub p_hat: f64,
    pub v_hat: f64,
    pub y1: u8,
    pub y2: u8,
}

/// The output of the adjustment: everything needed to build intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Upper confidence bound on the mean normalized score.
    pub gamma_plus: f64,
    /// Variance floor used for every record.
    pub epsilon: f64,
    /// Failure probability spent on the (one-sided) mean bound.
    pub alpha: f64,
    /// Number of calibration records.
    pub n: usize,
    /// Running mean of the normalized scores.
    pub mean_s: f64,
}

/// Normalized residual-product score
/// `(y1 - p_hat)(y2 - p_hat) / max(v_hat, epsilon)`, bounded by `1/epsilon`
/// in magnitude.
pub fn score_example(
    p_hat: f64,
    v_hat: f64,
    y1: u8,
    y2: u8,
    epsilon: f64,
) -> Result<f64, DistFreeError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(DistFreeError::InvalidEpsilon(epsilon));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(DistFreeError::InvalidPHat(p_hat));
    }
    for y in [y1, y2] {
        if y > 1 {
            return Err(DistFreeError::NonBinaryLabel(y));
        }
    }
    let denom = v_hat.max(epsilon);
    Ok((f64::from(y1) - p_hat) * (f64::from(y2) - p_hat) / denom)
}

/// Exact Hoeffding margin `sqrt(2 * (-ln alpha) / (n * epsilon^2))` for
/// scores bounded in `[-1/epsilon, 1/epsilon]`.
pub fn hoeffding_margin(n: usize, epsilon: f64, alpha: f64) -> f64 {
    (2.0 * (-alpha.ln()) / (n as f64 * epsilon * epsilon)).sqrt()
}

/// One-sided upper confidence bound for the mean of the scores:
/// `mean + hoeffding_margin`. The matching lower bound is `-1/epsilon` by
/// convention (all of `alpha` is spent on the upper side).
pub fn hoeffding_upper(scores: &[f64], epsilon: f64, alpha: f64) -> Result<f64, DistFreeError> {
    if scores.is_empty() {
        return Err(DistFreeError::EmptyInput);
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(DistFreeError::InvalidEpsilon(epsilon));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DistFreeError::InvalidAlpha(alpha));
    }
    let limit = 1.0 / epsilon;
    // Allow a hair of floating-point slack on the range check.
    let slack = limit * 1e-12;
    for &s in scores {
        if s < -limit - slack || s > limit + slack {
            return Err(DistFreeError::ScoreOutOfRange { value: s, lo: -limit, hi: limit });
        }
    }
    let mean = tree_sum(scores) / scores.len() as f64;
    Ok(mean + hoeffding_margin(scores.len(), epsilon, alpha))
}

/// Runs the full adjustment over a calibration set. Scoring is chunked
/// across workers with a fixed chunk layout and tree-reduced, so the
/// result is bit-identical for any `PAIRCAL_THREADS` setting.
pub fn adjust(
    records: &[CalibrationRecord],
    epsilon: f64,
    alpha: f64,
) -> Result<BoundReport, DistFreeError> {
    if records.is_empty() {
        return Err(DistFreeError::EmptyInput);
    }
    let scores: Vec<f64> = parallel_map_indexed(records.len(), |i| {
        let r = records[i];
        score_example(r.p_hat, r.v_hat, r.y1, r.y2, epsilon)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let gamma_plus = hoeffding_upper(&scores, epsilon, alpha)?;
    Ok(BoundReport {
        gamma_plus,
        epsilon,
        alpha,
        n: records.len(),
        mean_s: tree_sum(&scores) / scores.len() as f64,
    })
}

/// Applies a predictor to raw `(x, y1, y2)` triples and adjusts.
pub fn adjust_with_model<X>(
    calib: &[(X, u8, u8)],
    predict: impl Fn(&X) -> (f64, f64) + Sync,
    epsilon: f64,
    alpha: f64,
) -> Result<BoundReport, DistFreeError>
where
    X: Sync,
{
    if calib.is_empty() {
        return Err(DistFreeError::EmptyInput);
    }
    let records: Vec<CalibrationRecord> = parallel_map_indexed(calib.len(), |i| {
        let (x, y1, y2) = &calib[i];
        let (p_hat, v_hat) = predict(x);
        CalibrationRecord { p_hat, v_hat, y1: *y1, y2: *y2 }
    });
    adjust(&records, epsilon, alpha)
}

/// Interval `p_hat +- sqrt(gamma_plus * max(v_hat, epsilon) / beta)`,
/// clamped to `[0, 1]`. Valid for a fraction `1 - beta` of fresh inputs
/// with probability `1 - alpha` over the calibration draw.
pub fn adjusted_interval(
    p_hat: f64,
    v_hat: f64,
    report: &BoundReport,
    beta: f64,
) -> Result<Interval, DistFreeError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(DistFreeError::InvalidBeta(beta));
    }
    let half = (report.gamma_plus.max(0.0) * v_hat.max(report.epsilon) / beta).sqrt();
    Ok(Interval {
        lo: (p_hat - half).clamp(0.0, 1.0),
        hi: (p_hat + half).clamp(0.0, 1.0),
        beta,
    })
}
