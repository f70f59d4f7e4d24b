//! Ranking strategies for separating correct samples from hallucinations.
//!
//! Every strategy assigns each sample a score where higher should mean
//! more trustworthy; sorting descending and sweeping a response-rate
//! cutoff traces a hallucination-rate curve. Confidence-based scores come
//! in several variants that differ only in how they treat confidences
//! above one, which a calibrated model never produces.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RankingError {
    #[error("sample {index} is missing a score for strategy {strategy:?}")]
    MissingScore { index: usize, strategy: String },
    #[error("empty input")]
    EmptyInput,
}

/// Confidence-to-score transforms for handling `C > 1`. Each agrees with
/// `1 - C` when `C <= 1`; scores are negated penalties so larger is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceTransform {
    /// `-(1 - C)`: nonsensical for very large C (rewards outliers).
    OneMinus,
    /// `-|1 - C|`: the recommended default.
    AbsOneMinus,
    /// `-(1 - min(1, C))`: treats all C >= 1 as perfect.
    OneMinusMinWithOne,
    /// `-(1 - min(C, 1/C))`: symmetric in log space.
    OneMinusMinWithInverse,
}

impl ConfidenceTransform {
    pub fn score(self, confidence: f64) -> f64 {
        match self {
            ConfidenceTransform::OneMinus => -(1.0 - confidence),
            ConfidenceTransform::AbsOneMinus => -((1.0 - confidence).abs()),
            ConfidenceTransform::OneMinusMinWithOne => -(1.0 - confidence.min(1.0)),
            ConfidenceTransform::OneMinusMinWithInverse => {
                let c = if confidence > 0.0 {
                    confidence.min(1.0 / confidence)
                } else {
                    0.0
                };
                -(1.0 - c)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfidenceTransform::OneMinus => "one_minus_c",
            ConfidenceTransform::AbsOneMinus => "abs_one_minus_c",
            ConfidenceTransform::OneMinusMinWithOne => "one_minus_min_c_1",
            ConfidenceTransform::OneMinusMinWithInverse => "one_minus_min_c_inv",
        }
    }
}

/// One scored sample with its ground-truth hallucination label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub sentence: String,
    /// `(strategy name, score)` pairs; higher scores rank earlier.
    pub scores: Vec<(String, f64)>,
    pub is_hallucination: bool,
}

/// A running response-rate / hallucination-rate curve for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingCurve {
    pub strategy: String,
    /// `(score, is_hallucination)` in rank order.
    pub ranked: Vec<(f64, bool)>,
    /// `(response_rate, hallucination_rate)` after each prefix.
    pub curve: Vec<(f64, f64)>,
}

impl RankingCurve {
    /// Hallucination rate at the largest response rate `<= target`.
    pub fn hallucination_at_response_rate(&self, target: f64) -> Option<f64> {
        self.curve
            .iter()
            .take_while(|(rr, _)| *rr <= target + 1e-12)
            .last()
            .map(|(_, hr)| *hr)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("rank,score,is_hallucination,response_rate,hallucination_rate\n");
        for (i, ((score, h), (rr, hr))) in self.ranked.iter().zip(&self.curve).enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", i, score, u8::from(*h), rr, hr));
        }
        out
    }
}

/// Sorts every sample by each strategy's score (descending, ties shuffled
/// by a seeded stream) and emits the running curves.
pub fn ranking_comparison(
    samples: &[RankedSample],
    strategies: &[String],
    seed: u64,
) -> Result<Vec<RankingCurve>, RankingError> {
    if samples.is_empty() {
        return Err(RankingError::EmptyInput);
    }
    let mut curves = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let mut scored = Vec::with_capacity(samples.len());
        for (index, s) in samples.iter().enumerate() {
            let score = s
                .scores
                .iter()
                .find(|(name, _)| name == strategy)
                .map(|(_, v)| *v)
                .ok_or_else(|| RankingError::MissingScore {
                    index,
                    strategy: strategy.clone(),
                })?;
            scored.push((score, s.is_hallucination));
        }
        // Randomize tie order with a per-strategy substream, then stable
        // sort by score so equal scores keep the shuffled order.
        let mut rng = ChaCha8Rng::seed_from_u64(crate::util::substream_seed(
            seed,
            fxhash(strategy.as_bytes()),
        ));
        scored.shuffle(&mut rng);
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
        let mut curve = Vec::with_capacity(scored.len());
        let mut hallucinated = 0usize;
        for (i, (_, h)) in scored.iter().enumerate() {
            hallucinated += usize::from(*h);
            curve.push((
                (i + 1) as f64 / samples.len() as f64,
                hallucinated as f64 / (i + 1) as f64,
            ));
        }
        curves.push(RankingCurve { strategy: strategy.clone(), ranked: scored, curve });
    }
    Ok(curves)
}

/// Cluster score: the size of the sample's semantic-equivalence class
/// within its group (including itself); malformed samples score 1.
pub fn cluster_scores<K: Eq + std::hash::Hash + Clone>(
    keys: &[Option<K>],
    group_size: usize,
) -> Vec<f64> {
    let mut out = vec![1.0; keys.len()];
    let mut start = 0;
    while start < keys.len() {
        let end = (start + group_size).min(keys.len());
        let mut counts: std::collections::HashMap<K, usize> = std::collections::HashMap::new();
        for key in keys[start..end].iter().flatten() {
            *counts.entry(key.clone()).or_insert(0) += 1;
        }
        for (i, key) in keys[start..end].iter().enumerate() {
            if let Some(k) = key {
                out[start + i] = counts[k] as f64;
            }
        }
        start = end;
    }
    out
}

fn fxhash(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325_u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
