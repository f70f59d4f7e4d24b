//! Confidence-gated decoding strategies.
//!
//! All three decoders consult only the model's outputs (samples, marginal
//! probabilities, cheat scores), never the raw input, which is the
//! independence condition their hallucination-rate guarantee needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::CheatScore;

/// What a decoder needs from a model for one fixed query.
pub trait CheatScoredModel {
    type Resp: Clone;

    /// Draws from the model's `Y1` marginal.
    fn sample_response<R: Rng>(&self, rng: &mut R) -> Self::Resp;

    /// Two-pass cheat score of a response.
    fn score(&self, y: &Self::Resp) -> CheatScore;

    /// `p(Y1 = y)` under the model.
    fn marginal_prob(&self, y: &Self::Resp) -> f64;

    /// Stable string form; used for output, deduplication, and
    /// deterministic tie-breaking.
    fn label(&self, y: &Self::Resp) -> String;

    /// The enumerated response support, when finite and small enough to
    /// enumerate. `None` switches top-1 search to a sampling budget.
    fn candidates(&self) -> Option<Vec<Self::Resp>> {
        None
    }
}

/// Accept/reject rule on the confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `1 - C <= beta`. Exact for calibrated models, where `C <= 1`.
    OneSided,
    /// `|1 - C| <= beta`. Also rejects `C` far above 1, which only
    /// miscalibrated models produce.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub beta: f64,
    pub mode: ThresholdMode,
    /// Rejection-sampling attempt budget.
    pub max_attempts: u32,
    /// Sample budget for top-1 search without enumerable candidates.
    pub candidate_budget: u32,
}

impl DecodePolicy {
    pub fn new(beta: f64, mode: ThresholdMode) -> Self {
        Self { beta, mode, max_attempts: 1_000, candidate_budget: 6_400 }
    }

    pub fn passes(&self, confidence: f64) -> bool {
        match self.mode {
            ThresholdMode::OneSided => 1.0 - confidence <= self.beta,
            ThresholdMode::Absolute => (1.0 - confidence).abs() <= self.beta,
        }
    }
}

/// An accepted response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response<R> {
    pub y: R,
    pub score: CheatScore,
    pub attempts: u32,
}

/// Decoder outcome. `Abstain` is an epistemic refusal (a score failed the
/// threshold, or no candidate passed); `Exhausted` means the rejection
/// budget ran out, which callers may treat differently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decoded<R> {
    Respond(Response<R>),
    Abstain { last_score: Option<CheatScore> },
    Exhausted { attempts: u32 },
}

impl<R> Decoded<R> {
    pub fn response(&self) -> Option<&Response<R>> {
        match self {
            Decoded::Respond(r) => Some(r),
            _ => None,
        }
    }
}

/// Scores one externally drawn sample and accepts or abstains. The
/// sampler may be any distribution derived from the model's outputs
/// (temperature, top-k, ...).
pub fn selective_filter<M: CheatScoredModel>(
    model: &M,
    sample: M::Resp,
    policy: &DecodePolicy,
) -> Decoded<M::Resp> {
    let score = model.score(&sample);
    if policy.passes(score.confidence) {
        Decoded::Respond(Response { y: sample, score, attempts: 1 })
    } else {
        Decoded::Abstain { last_score: Some(score) }
    }
}

/// Repeatedly samples the model's marginal until a draw passes the
/// threshold or the budget runs out.
pub fn rejection_sample<M: CheatScoredModel, R: Rng>(
    model: &M,
    policy: &DecodePolicy,
    rng: &mut R,
) -> Decoded<M::Resp> {
    for attempt in 1..=policy.max_attempts {
        let y = model.sample_response(rng);
        let score = model.score(&y);
        if policy.passes(score.confidence) {
            return Decoded::Respond(Response { y, score, attempts: attempt });
        }
    }
    Decoded::Exhausted { attempts: policy.max_attempts }
}

/// Deterministically returns the highest-marginal-probability candidate
/// that passes the threshold, or abstains when none does. Candidates come
/// from the model's enumerated support when available, otherwise from a
/// deduplicated sampling budget. Ties break toward the smaller label.
pub fn top1_search<M: CheatScoredModel, R: Rng>(
    model: &M,
    policy: &DecodePolicy,
    rng: &mut R,
) -> Decoded<M::Resp> {
    let (candidates, attempts) = match model.candidates() {
        Some(c) => (c, 1),
        None => {
            let mut seen = std::collections::BTreeMap::new();
            for _ in 0..policy.candidate_budget {
                let y = model.sample_response(rng);
                seen.entry(model.label(&y)).or_insert(y);
            }
            (seen.into_values().collect(), policy.candidate_budget)
        }
    };
    let mut best: Option<(f64, String, M::Resp, CheatScore)> = None;
    for y in candidates {
        let score = model.score(&y);
        if !policy.passes(score.confidence) {
            continue;
        }
        let p = model.marginal_prob(&y);
        let label = model.label(&y);
        let better = match &best {
            None => true,
            Some((bp, blabel, _, _)) => p > *bp || (p == *bp && label < *blabel),
        };
        if better {
            best = Some((p, label, y, score));
        }
    }
    match best {
        Some((_, _, y, score)) => Decoded::Respond(Response { y, score, attempts }),
        None => Decoded::Abstain { last_score: None },
    }
}
