//! Cheat-corrected pointwise estimators and the bounds they imply.
//!
//! Scoring a response twice (once under the `Y1` marginal, once with the
//! model conditioning on that same response as `Y1`, i.e. "self-cheating")
//! yields an epistemic variance estimate and a confidence in `[0, 1]`
//! for calibrated models. The variance gives Chebyshev/Cantelli intervals
//! for the true conditional probability; one minus the average confidence
//! bounds the statistical hallucination rate of any decoder whose behavior
//! depends on the input only through the model's outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::JointPairDistribution;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("beta = {0} must lie strictly inside (0, 1)")]
    InvalidBeta(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("confidence is not finite for {count} scores; they must be handled as diagnostics")]
    NonFiniteConfidence { count: usize },
    #[error("label {0:?} is not in the joint's alphabet")]
    UnknownLabel(String),
}

/// The two-pass score for one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheatScore {
    /// The scored response label.
    pub y: String,
    /// `p(Y1 = y | x)` under the model.
    pub p_marginal: f64,
    /// `p(Y2 = y | Y1 = y, x)`: the self-cheating probability.
    pub p_self_cheat: f64,
    /// `p_marginal * (p_self_cheat - p_marginal)`. Negative values are
    /// possible for miscalibrated models and are reported raw.
    pub v_cheat: f64,
    /// `p_marginal / p_self_cheat`, or 0 when `p_marginal` is 0. May
    /// exceed 1 (or be infinite) for miscalibrated models.
    pub confidence: f64,
    /// Set when `p_self_cheat = 0 < p_marginal`, which cannot happen for a
    /// consistent joint; the confidence is then an infinite sentinel.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl CheatScore {
    /// Builds a score from the two probabilities that define it.
    pub fn from_probs(y: impl Into<String>, p_marginal: f64, p_pair_diag: f64) -> CheatScore {
        let p_self_cheat = if p_marginal > 0.0 { p_pair_diag / p_marginal } else { 0.0 };
        let v_cheat = p_marginal * (p_self_cheat - p_marginal);
        let (confidence, degenerate) = if p_marginal == 0.0 {
            (0.0, false)
        } else if p_self_cheat == 0.0 {
            (f64::INFINITY, true)
        } else {
            (p_marginal / p_self_cheat, false)
        };
        CheatScore {
            y: y.into(),
            p_marginal,
            p_self_cheat,
            v_cheat,
            confidence,
            degenerate,
        }
    }

    /// Score for label `y` under a mixture of component conditionals with
    /// the given weights: the marginal is the weighted mean of the
    /// per-component probabilities of `y` and the pair diagonal is the
    /// weighted mean of their squares. This evaluates joints too large to
    /// materialize (for example over trajectory spaces).
    pub fn from_mixture(y: impl Into<String>, weights: &[f64], probs: &[f64]) -> CheatScore {
        debug_assert_eq!(weights.len(), probs.len());
        let p_marginal: f64 = weights.iter().zip(probs).map(|(w, p)| w * p).sum();
        let p_pair_diag: f64 = weights.iter().zip(probs).map(|(w, p)| w * p * p).sum();
        Self::from_probs(y, p_marginal, p_pair_diag)
    }

    /// Variance clamped to be non-negative, as used by the interval
    /// constructors.
    pub fn v_clamped(&self) -> f64 {
        self.v_cheat.max(0.0)
    }

    /// True when the raw variance was negative (a miscalibration signal).
    pub fn negative_variance(&self) -> bool {
        self.v_cheat < 0.0
    }

    /// CSV header matching [`Self::csv_row`].
    pub fn csv_header() -> &'static str {
        "example_id,y,p_marginal,p_self_cheat,v_cheat,confidence"
    }

    pub fn csv_row(&self, example_id: &str) -> String {
        format!(
            "{example_id},{},{},{},{},{}",
            escape_csv(&self.y),
            self.p_marginal,
            self.p_self_cheat,
            self.v_cheat,
            self.confidence
        )
    }
}

fn escape_csv(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Scores label index `y` under a pair joint.
pub fn cheat_score(j: &JointPairDistribution, y: usize) -> CheatScore {
    let (m1, _) = j.marginals();
    CheatScore::from_probs(j.labels()[y].clone(), m1.get(y), j.get(y, y))
}

/// Scores a label by name.
pub fn cheat_score_by_label(
    j: &JointPairDistribution,
    label: &str,
) -> Result<CheatScore, MetricsError> {
    let y = j
        .label_index(label)
        .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))?;
    Ok(cheat_score(j, y))
}

/// A two-sided confidence interval for a true conditional probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Failure tolerance: the true value escapes the interval with
    /// probability at most `beta` under the stated conditions.
    pub beta: f64,
}

impl Interval {
    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn check_beta(beta: f64) -> Result<(), MetricsError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(MetricsError::InvalidBeta(beta));
    }
    Ok(())
}

/// Chebyshev interval `p_marginal +- sqrt(v_cheat / beta)`, clamped to
/// `[0, 1]`. Negative variance is clamped to zero.
pub fn chebyshev_interval(score: &CheatScore, beta: f64) -> Result<Interval, MetricsError> {
    check_beta(beta)?;
    let half = (score.v_clamped() / beta).sqrt();
    Ok(Interval {
        lo: (score.p_marginal - half).clamp(0.0, 1.0),
        hi: (score.p_marginal + half).clamp(0.0, 1.0),
        beta,
    })
}

/// One-sided Cantelli bound: the true probability exceeds
/// `p_marginal - sqrt(v_cheat * (1/beta - 1))` with probability at least
/// `1 - beta` under calibration. Clamped to `[0, 1]`.
pub fn cantelli_lower_bound(score: &CheatScore, beta: f64) -> Result<f64, MetricsError> {
    check_beta(beta)?;
    let drop = (score.v_clamped() * (1.0 / beta - 1.0)).sqrt();
    Ok((score.p_marginal - drop).clamp(0.0, 1.0))
}

/// Upper bound on the statistical hallucination rate of the responses that
/// produced `scores`: one minus the mean confidence, with confidences
/// clamped to `[0, 1]` before averaging. Infinite (degenerate) confidences
/// are rejected rather than silently averaged.
pub fn hallucination_bound(scores: &[CheatScore]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let bad = scores.iter().filter(|s| !s.confidence.is_finite()).count();
    if bad > 0 {
        return Err(MetricsError::NonFiniteConfidence { count: bad });
    }
    let clamped: Vec<f64> = scores.iter().map(|s| s.confidence.clamp(0.0, 1.0)).collect();
    Ok(1.0 - crate::util::tree_mean(&clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::JointPairDistribution;

    fn joint2(m: [f64; 4]) -> JointPairDistribution {
        JointPairDistribution::from_matrix(m.to_vec(), 2).unwrap()
    }

    #[test]
    fn two_coin_mixture_score() {
        // Equal mixture of deterministic coins: seeing one flip reveals the coin.
        let j = joint2([0.5, 0.0, 0.0, 0.5]);
        let s = cheat_score(&j, 0);
        assert_eq!(s.p_marginal, 0.5);
        assert_eq!(s.p_self_cheat, 1.0);
        assert!((s.v_cheat - 0.25).abs() < 1e-15);
        assert!((s.confidence - 0.5).abs() < 1e-15);
    }

    #[test]
    fn known_fair_coin_has_full_confidence() {
        let j = joint2([0.25; 4]);
        let s = cheat_score(&j, 0);
        assert!(s.v_cheat.abs() < 1e-15);
        assert!((s.confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ten_way_unknown_digit() {
        // Ten deterministic answers, each correct for one of ten equally
        // likely contexts.
        let k = 10;
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            m[i * k + i] = 0.1;
        }
        let j = JointPairDistribution::from_matrix(m, k).unwrap();
        for y in 0..k {
            let s = cheat_score(&j, y);
            assert!((s.p_marginal - 0.1).abs() < 1e-15);
            assert!((s.p_self_cheat - 1.0).abs() < 1e-12);
            assert!((s.confidence - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_identity_holds() {
        for m in [
            [0.25, 0.25, 0.25, 0.25],
            [0.5, 0.0, 0.0, 0.5],
            [0.1, 0.2, 0.2, 0.5],
            [0.4, 0.1, 0.1, 0.4],
        ] {
            let j = joint2(m);
            for y in 0..2 {
                let s = cheat_score(&j, y);
                if s.p_marginal > 0.0 {
                    let identity = 1.0 / (1.0 + s.v_cheat / (s.p_marginal * s.p_marginal));
                    assert!(
                        (s.confidence - identity).abs() < 1e-9,
                        "identity violated: {} vs {}",
                        s.confidence,
                        identity
                    );
                }
            }
        }
    }

    #[test]
    fn zero_marginal_has_zero_confidence() {
        let j = joint2([1.0, 0.0, 0.0, 0.0]);
        let s = cheat_score(&j, 1);
        assert_eq!(s.p_marginal, 0.0);
        assert_eq!(s.confidence, 0.0);
        assert!(!s.degenerate);
    }

    #[test]
    fn degenerate_denominator_is_flagged() {
        // Only reachable through the raw constructor: a consistent joint
        // cannot have p_marginal > 0 with a zero diagonal at y after the
        // self-cheat division, but asymmetric sequence-style evaluation can.
        let s = CheatScore::from_probs("y", 0.3, 0.0);
        assert!(s.degenerate);
        assert!(s.confidence.is_infinite());
        assert_eq!(
            hallucination_bound(&[s]),
            Err(MetricsError::NonFiniteConfidence { count: 1 })
        );
    }

    #[test]
    fn chebyshev_examples() {
        let s = CheatScore::from_probs("y", 0.5, 0.5 * 0.5 + 0.0025);
        assert!((s.v_cheat - 0.0025).abs() < 1e-12);
        let iv = chebyshev_interval(&s, 0.25).unwrap();
        assert!((iv.lo - 0.4).abs() < 1e-9);
        assert!((iv.hi - 0.6).abs() < 1e-9);

        let s0 = CheatScore::from_probs("y", 0.3, 0.09);
        let iv = chebyshev_interval(&s0, 0.1).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.3, 0.3));

        // Two-coin mixture at beta = 0.5: half-width sqrt(0.5) clamps to [0, 1].
        let s = cheat_score(&joint2([0.5, 0.0, 0.0, 0.5]), 0);
        let iv = chebyshev_interval(&s, 0.5).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.0, 1.0));

        assert_eq!(chebyshev_interval(&s, 0.0), Err(MetricsError::InvalidBeta(0.0)));
        assert_eq!(chebyshev_interval(&s, 1.0), Err(MetricsError::InvalidBeta(1.0)));
    }

    #[test]
    fn cantelli_examples() {
        let s = CheatScore::from_probs("y", 0.7, 0.49);
        assert!((cantelli_lower_bound(&s, 0.2).unwrap() - 0.7).abs() < 1e-7);

        let s = CheatScore::from_probs("y", 0.5, 0.5);
        assert!((s.v_cheat - 0.25).abs() < 1e-15);
        assert!((cantelli_lower_bound(&s, 0.5).unwrap() - 0.0).abs() < 1e-12);

        let s = CheatScore::from_probs("y", 0.9, 0.81 + 0.01);
        assert!((cantelli_lower_bound(&s, 0.1).unwrap() - 0.6).abs() < 1e-9);
    }

    #[test]
    fn hallucination_bound_examples() {
        let one = CheatScore::from_probs("a", 0.5, 0.25);
        assert!((one.confidence - 1.0).abs() < 1e-12);
        assert!(hallucination_bound(&[one.clone(), one.clone()]).unwrap().abs() < 1e-12);

        let half = CheatScore::from_probs("b", 0.5, 0.5);
        assert!((hallucination_bound(&[one, half]).unwrap() - 0.25).abs() < 1e-12);

        let k = 10;
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            m[i * k + i] = 0.1;
        }
        let j = JointPairDistribution::from_matrix(m, k).unwrap();
        let scores: Vec<CheatScore> = (0..k).map(|y| cheat_score(&j, y)).collect();
        assert!((hallucination_bound(&scores).unwrap() - 0.9).abs() < 1e-12);

        assert_eq!(hallucination_bound(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn mixture_scoring_matches_joint_scoring() {
        // Mixture of (0.3, 0.7) and (0.8, 0.2) with weights 0.4/0.6.
        let weights = [0.4, 0.6];
        let comps = [[0.3, 0.7], [0.8, 0.2]];
        let k = 2;
        let mut m = vec![0.0; 4];
        for (w, c) in weights.iter().zip(&comps) {
            for i in 0..k {
                for j in 0..k {
                    m[i * k + j] += w * c[i] * c[j];
                }
            }
        }
        let joint = JointPairDistribution::from_matrix(m, 2).unwrap();
        for y in 0..2 {
            let a = cheat_score(&joint, y);
            let probs: Vec<f64> = comps.iter().map(|c| c[y]).collect();
            let b = CheatScore::from_mixture(y.to_string(), &weights, &probs);
            assert!((a.p_marginal - b.p_marginal).abs() < 1e-12);
            assert!((a.v_cheat - b.v_cheat).abs() < 1e-12);
            assert!((a.confidence - b.confidence).abs() < 1e-12);
        }
    }
}
