//! Digits of pi and the query distribution over digit offsets.
//!
//! The digits ship as a checked-in text asset (10,000 decimal digits after
//! the point); the acceptance suite re-derives them with an independent
//! spigot computation. Query offsets follow a mixture of geometric
//! distributions truncated below 10,000, so early digits are asked about
//! far more often than late ones.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Decimal digits of pi after the point, most significant first.
pub const PI_DIGITS_TEXT: &str = include_str!("../../assets/pi_digits.txt");

/// Number of digits in the asset (also the exclusive upper bound for
/// offsets: valid offsets are `1..=9999` after rejection).
pub const MAX_OFFSET: u32 = 10_000;

/// Lower and upper end of the uniform distribution over the geometric
/// success parameter.
pub const Q_LO: f64 = 0.001;
pub const Q_HI: f64 = 0.1;

/// The `offset`-th digit of pi after the decimal point, 1-based
/// (offset 1 is 1, offset 2 is 4, ...).
pub fn digit(offset: u32) -> u8 {
    assert!(
        (1..MAX_OFFSET).contains(&offset),
        "offset {offset} outside 1..{MAX_OFFSET}"
    );
    let bytes = PI_DIGITS_TEXT.as_bytes();
    bytes[(offset - 1) as usize] - b'0'
}

/// SHA-256 of the digit asset, hex-encoded.
pub fn digits_checksum() -> String {
    let mut h = Sha256::new();
    h.update(PI_DIGITS_TEXT.as_bytes());
    format!("{:x}", h.finalize())
}

/// Samples a digit offset: `Q ~ Uniform(0.001, 0.1)`,
/// `I ~ Geometric(Q)` with support `{1, 2, ...}`, both redrawn until
/// `I < 10_000`.
pub fn sample_offset(rng: &mut impl Rng) -> u32 {
    loop {
        let q: f64 = Q_LO + (Q_HI - Q_LO) * rng.gen::<f64>();
        // Inverse-transform geometric on {1, 2, ...}.
        let u: f64 = rng.gen();
        let i = ((1.0 - u).ln() / (1.0 - q).ln()).floor() as i64 + 1;
        if (1..MAX_OFFSET as i64).contains(&i) {
            return i as u32;
        }
    }
}

/// Unnormalized probability that the untruncated mixture draws offset `i`:
/// the integral of `q (1 - q)^(i-1)` over the uniform range of `Q`,
/// which has the closed form `[u^i / i - u^(i+1) / (i+1)]` between
/// `u = 1 - Q_HI` and `u = 1 - Q_LO`.
fn raw_offset_weight(i: u32) -> f64 {
    let term = |u: f64| {
        let i = i as f64;
        u.powf(i) / i - u.powf(i + 1.0) / (i + 1.0)
    };
    (term(1.0 - Q_LO) - term(1.0 - Q_HI)) / (Q_HI - Q_LO)
}

/// Exact probabilities of offsets `1..MAX_OFFSET` under the truncated,
/// renormalized query distribution. `weights[0]` is the weight of offset 1.
pub fn offset_weights() -> Vec<f64> {
    let raw: Vec<f64> = (1..MAX_OFFSET).map(raw_offset_weight).collect();
    let total = crate::util::tree_sum(&raw);
    raw.into_iter().map(|w| w / total).collect()
}

/// Grouping over digit offsets: early offsets (seen constantly in
/// training) are singleton groups the model "knows"; later offsets fall
/// into geometrically widening buckets the model cannot tell apart.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OffsetBuckets {
    /// Offsets `1..=singleton_max` are their own groups.
    pub singleton_max: u32,
    /// Ascending bucket upper bounds (inclusive) covering
    /// `singleton_max+1 ..= 9999`.
    pub bucket_ends: Vec<u32>,
}

impl OffsetBuckets {
    pub fn geometric(singleton_max: u32, ratio: f64) -> Self {
        let mut bucket_ends = Vec::new();
        let mut end = singleton_max;
        while end < MAX_OFFSET - 1 {
            let next = ((end as f64 * ratio).ceil() as u32).max(end + 1);
            end = next.min(MAX_OFFSET - 1);
            bucket_ends.push(end);
        }
        Self { singleton_max, bucket_ends }
    }

    pub fn n_groups(&self) -> usize {
        self.singleton_max as usize + self.bucket_ends.len()
    }

    pub fn group_of(&self, offset: u32) -> usize {
        assert!((1..MAX_OFFSET).contains(&offset));
        if offset <= self.singleton_max {
            (offset - 1) as usize
        } else {
            let b = self.bucket_ends.partition_point(|&end| end < offset);
            self.singleton_max as usize + b
        }
    }

    /// Inclusive offset range of a group.
    pub fn group_range(&self, group: usize) -> (u32, u32) {
        let s = self.singleton_max as usize;
        if group < s {
            (group as u32 + 1, group as u32 + 1)
        } else {
            let b = group - s;
            let lo = if b == 0 { self.singleton_max + 1 } else { self.bucket_ends[b - 1] + 1 };
            (lo, self.bucket_ends[b])
        }
    }
}

impl Default for OffsetBuckets {
    fn default() -> Self {
        Self::geometric(200, 1.15)
    }
}

/// The exactly calibrated pair model for the digit task: per group, a
/// mixture over the ten digits weighted by the query mass of this group's
/// offsets carrying each digit. Sentence scores are computed against the
/// grammar's exact conditionals, so the joint over sentence pairs is
/// never materialized.
#[derive(Debug, Clone)]
pub struct PiPairModel {
    pub buckets: OffsetBuckets,
    /// `digit_weights[g][d]`: probability that the digit is `d` given the
    /// query landed in group `g`.
    digit_weights: Vec<[f64; 10]>,
}

impl PiPairModel {
    pub fn new(buckets: OffsetBuckets) -> Self {
        let weights = offset_weights();
        let mut digit_weights = vec![[0.0; 10]; buckets.n_groups()];
        for offset in 1..MAX_OFFSET {
            let g = buckets.group_of(offset);
            digit_weights[g][digit(offset) as usize] += weights[(offset - 1) as usize];
        }
        for w in digit_weights.iter_mut() {
            let total: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= total;
            }
        }
        Self { buckets, digit_weights }
    }

    pub fn group_of(&self, offset: u32) -> usize {
        self.buckets.group_of(offset)
    }

    pub fn digit_weights(&self, group: usize) -> &[f64; 10] {
        &self.digit_weights[group]
    }

    /// `p(Y1 = sentence | group)`.
    pub fn marginal(&self, group: usize, sentence: &str) -> f64 {
        self.digit_weights[group]
            .iter()
            .enumerate()
            .map(|(d, w)| w * crate::tasks::pcfg::inside_prob(d as u8, sentence).expect("digit in range"))
            .sum()
    }

    /// Exact mixture cheat score of a sentence for a group.
    pub fn score(&self, group: usize, sentence: &str) -> crate::metrics::CheatScore {
        let probs: Vec<f64> = (0..10u8)
            .map(|d| crate::tasks::pcfg::inside_prob(d, sentence).expect("digit in range"))
            .collect();
        crate::metrics::CheatScore::from_mixture(sentence, &self.digit_weights[group], &probs)
    }

    /// Samples from the group's `Y1` marginal: a digit by weight, then a
    /// sentence from that digit's grammar.
    pub fn sample(&self, group: usize, rng: &mut impl Rng) -> String {
        let w = &self.digit_weights[group];
        let mut u: f64 = rng.gen();
        let mut d = 9usize;
        for (i, &wi) in w.iter().enumerate() {
            u -= wi;
            if u < 0.0 {
                d = i;
                break;
            }
        }
        crate::tasks::pcfg::sample(d as u8, rng).expect("digit in range")
    }

    /// Union support over the group's digits, sorted for determinism.
    pub fn candidates(&self, group: usize) -> Vec<String> {
        let mut set = std::collections::BTreeSet::new();
        for (d, &w) in self.digit_weights[group].iter().enumerate() {
            if w > 0.0 {
                for entry in crate::tasks::pcfg::enumerate_support(d as u8).expect("digit in range") {
                    set.insert(entry.sentence);
                }
            }
        }
        set.into_iter().collect()
    }

    /// Per-query decode view.
    pub fn at_group(&self, group: usize) -> PiQueryModel<'_> {
        PiQueryModel { model: self, group }
    }
}

/// A [`PiPairModel`] fixed to one query group, as decoders see it.
#[derive(Debug, Clone, Copy)]
pub struct PiQueryModel<'a> {
    model: &'a PiPairModel,
    pub group: usize,
}

impl crate::decode::CheatScoredModel for PiQueryModel<'_> {
    type Resp = String;

    fn sample_response<R: Rng>(&self, rng: &mut R) -> String {
        self.model.sample(self.group, rng)
    }

    fn score(&self, y: &String) -> crate::metrics::CheatScore {
        self.model.score(self.group, y)
    }

    fn marginal_prob(&self, y: &String) -> f64 {
        self.model.marginal(self.group, y)
    }

    fn label(&self, y: &String) -> String {
        y.clone()
    }

    fn candidates(&self) -> Option<Vec<String>> {
        Some(self.model.candidates(self.group))
    }
}

/// A deliberately miscalibrated wrapper: confidences on real sentences
/// get multiplicative log-normal noise (so some exceed 1), and sampling
/// occasionally emits a malformed sentence that gets a tiny marginal and
/// an outlier confidence, mimicking the failure mode of sequence models
/// on out-of-distribution samples.
#[derive(Debug, Clone)]
pub struct PerturbedPiModel {
    pub base: PiPairModel,
    pub noise_sigma: f64,
    pub malformed_rate: f64,
    pub seed: u64,
}

impl PerturbedPiModel {
    pub fn new(base: PiPairModel, seed: u64) -> Self {
        Self { base, noise_sigma: 0.15, malformed_rate: 0.03, seed }
    }

    fn sentence_noise(&self, group: usize, sentence: &str) -> f64 {
        let mut h = 0xcbf29ce484222325_u64 ^ (group as u64).wrapping_mul(0x9e3779b97f4a7c15);
        for b in sentence.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::util::substream_seed(self.seed, h));
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    }

    pub fn marginal(&self, group: usize, sentence: &str) -> f64 {
        let exact = self.base.marginal(group, sentence);
        if exact > 0.0 {
            exact
        } else {
            // Out-of-distribution sentences keep a sliver of mass.
            1e-6 * (1.0 + self.sentence_noise(group, sentence).abs())
        }
    }

    pub fn score(&self, group: usize, sentence: &str) -> crate::metrics::CheatScore {
        let z = self.sentence_noise(group, sentence);
        let exact = self.base.score(group, sentence);
        let confidence = if exact.p_marginal > 0.0 {
            exact.confidence * (self.noise_sigma * z).exp()
        } else {
            // Malformed sample: large outlier confidence.
            (1.0 + 2.0 * z.abs()).exp()
        };
        let p_marginal = self.marginal(group, sentence);
        let p_self_cheat = p_marginal / confidence;
        crate::metrics::CheatScore {
            y: sentence.to_string(),
            p_marginal,
            p_self_cheat,
            v_cheat: p_marginal * (p_self_cheat - p_marginal),
            confidence,
            degenerate: false,
        }
    }

    pub fn sample(&self, group: usize, rng: &mut impl Rng) -> String {
        if rng.gen::<f64>() < self.malformed_rate {
            let d = rng.gen_range(0..10u8);
            let variants = [
                format!("Um, it's {d}"),
                format!("It's spelled {d} letters"),
                format!("That is number number {d}"),
                "Sure, that's spelled with".to_string(),
            ];
            variants[rng.gen_range(0..variants.len())].clone()
        } else {
            self.base.sample(group, rng)
        }
    }

    pub fn at_group(&self, group: usize) -> PerturbedPiQueryModel<'_> {
        PerturbedPiQueryModel { model: self, group }
    }
}

/// Decode view of the perturbed model.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedPiQueryModel<'a> {
    model: &'a PerturbedPiModel,
    pub group: usize,
}

impl crate::decode::CheatScoredModel for PerturbedPiQueryModel<'_> {
    type Resp = String;

    fn sample_response<R: Rng>(&self, rng: &mut R) -> String {
        self.model.sample(self.group, rng)
    }

    fn score(&self, y: &String) -> crate::metrics::CheatScore {
        self.model.score(self.group, y)
    }

    fn marginal_prob(&self, y: &String) -> f64 {
        self.model.marginal(self.group, y)
    }

    fn label(&self, y: &String) -> String {
        y.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_digits_match_reference() {
        let want = [1, 4, 1, 5, 9, 2, 6, 5, 3, 5];
        for (i, w) in want.iter().enumerate() {
            assert_eq!(digit(i as u32 + 1), *w);
        }
        // The offsets highlighted in the sample walkthroughs.
        assert_eq!(digit(236), 8);
    }

    #[test]
    fn asset_has_expected_shape() {
        assert_eq!(PI_DIGITS_TEXT.len(), 10_001); // 10,000 digits + newline
        assert!(PI_DIGITS_TEXT.trim_end().bytes().all(|b| b.is_ascii_digit()));
    }

    #[test]
    fn offsets_stay_in_range_and_favor_early_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut early = 0usize;
        let mut late = 0usize;
        for _ in 0..n {
            let i = sample_offset(&mut rng);
            assert!((1..MAX_OFFSET).contains(&i));
            if i <= 10 {
                early += 1;
            }
            if (1001..=1010).contains(&i) {
                late += 1;
            }
        }
        assert!(early > late, "early {early} vs late {late}");
    }

    #[test]
    fn offset_weights_match_sampler() {
        let weights = offset_weights();
        assert_eq!(weights.len(), (MAX_OFFSET - 1) as usize);
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Monte Carlo agreement on a few offsets.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 400_000;
        let mut counts = vec![0usize; weights.len()];
        for _ in 0..n {
            counts[(sample_offset(&mut rng) - 1) as usize] += 1;
        }
        for &offset in &[1u32, 2, 5, 20, 100] {
            let w = weights[(offset - 1) as usize];
            let freq = counts[(offset - 1) as usize] as f64 / n as f64;
            let sigma = (w * (1.0 - w) / n as f64).sqrt();
            assert!(
                (freq - w).abs() < 4.0 * sigma + 1e-9,
                "offset {offset}: weight {w} freq {freq}"
            );
        }
    }

    #[test]
    fn checksum_is_stable() {
        assert_eq!(
            digits_checksum(),
            "4baf45ce49e9f11bfcc085f1305d40e875d1e5492dec8b99e24cb2c9e758d906"
        );
    }

    #[test]
    fn buckets_partition_all_offsets() {
        let buckets = OffsetBuckets::default();
        for offset in 1..MAX_OFFSET {
            let g = buckets.group_of(offset);
            let (lo, hi) = buckets.group_range(g);
            assert!((lo..=hi).contains(&offset), "offset {offset} group {g}");
        }
        assert_eq!(buckets.group_of(1), 0);
        assert_eq!(buckets.group_of(200), 199);
        assert_eq!(buckets.group_of(201), 200);
    }

    #[test]
    fn singleton_groups_have_unit_confidence() {
        let model = PiPairModel::new(OffsetBuckets::default());
        let g = model.group_of(7);
        let d = digit(7);
        let s = model.score(g, &format!("It's {d}"));
        assert!((s.confidence - 1.0).abs() < 1e-12);
        // A wrong-digit claim has zero marginal in a singleton group.
        let wrong = (d + 1) % 10;
        let s = model.score(g, &format!("It's {wrong}"));
        assert_eq!(s.p_marginal, 0.0);
        assert_eq!(s.confidence, 0.0);
    }

    #[test]
    fn bucket_groups_spread_confidence() {
        let model = PiPairModel::new(OffsetBuckets::default());
        let g = model.group_of(5000);
        let w = model.digit_weights(g);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // A digit-value claim's confidence equals that digit's weight in
        // the group (deterministic-components mixture at that key).
        for d in 0..10u8 {
            if w[d as usize] == 0.0 {
                continue;
            }
            let s = model.score(g, &format!("It's {d}"));
            assert!(
                (s.confidence - w[d as usize]).abs() < 1e-9,
                "digit {d}: C = {} weight = {}",
                s.confidence,
                w[d as usize]
            );
        }
        // The hazy sentence is equally likely under every digit: C = 1.
        let s = model.score(g, crate::tasks::pcfg::HAZY_SENTENCE);
        assert!((s.confidence - 1.0).abs() < 1e-9);
    }

    #[test]
    fn model_samples_are_never_impossible_for_their_group() {
        let model = PiPairModel::new(OffsetBuckets::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let offset = sample_offset(&mut rng);
            let g = model.group_of(offset);
            let y = model.sample(g, &mut rng);
            assert!(model.marginal(g, &y) > 0.0);
        }
    }

    #[test]
    fn perturbed_model_emits_malformed_and_overconfident_scores() {
        let base = PiPairModel::new(OffsetBuckets::default());
        let perturbed = PerturbedPiModel::new(base, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = perturbed.base.group_of(4000);
        let mut over_one = 0;
        let mut malformed = 0;
        for _ in 0..2000 {
            let y = perturbed.sample(g, &mut rng);
            let s = perturbed.score(g, &y);
            if s.confidence > 1.0 {
                over_one += 1;
            }
            if crate::tasks::pcfg::semantic_key(&y).is_none() {
                malformed += 1;
                assert!(s.p_marginal > 0.0 && s.p_marginal < 1e-4);
                assert!(s.confidence > 1.5);
            }
        }
        assert!(over_one > 0, "noise should push some confidences above 1");
        assert!(malformed > 20, "malformed samples should appear");
    }
}
