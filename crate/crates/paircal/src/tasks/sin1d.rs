//! One-dimensional binary regression task.
//!
//! `X` is standard normal and `Y | X = x` is Bernoulli with a success
//! probability that oscillates quickly near `x = 0` and slowly further
//! out, so a smooth model underfits exactly where the high-frequency
//! component lives.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::util::{softplus_scaled, substream_seed};

/// `P(Y = 1 | X = x) = (0.98 u(x) + 1) / 2` with
/// `u(x) = 0.6 cos(v(x)) + 0.4 cos(4.2 x)`,
/// `v(x) = sign(x) (120 |x| - 112 w(|x|) - 0.0635)`, and
/// `w(z) = 0.2 ln(1 + exp((z - 1) / 0.2))` evaluated in softplus form.
/// `sign(0) = 0`, the continuous limit at the origin.
pub fn prob(x: f64) -> f64 {
    let z = x.abs();
    let w = softplus_scaled(z - 1.0, 0.2);
    let sign = if x == 0.0 { 0.0 } else { x.signum() };
    let v = sign * (120.0 * z - 112.0 * w - 0.0635);
    let u = 0.6 * v.cos() + 0.4 * (4.2 * x).cos();
    (0.98 * u + 1.0) / 2.0
}

/// One training record: an input and two conditionally independent labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sin1dExample {
    pub x: f64,
    pub y1: u8,
    pub y2: u8,
}

/// Draws `n` paired examples. Each example uses its own random substream,
/// so example `i` is identical whether generation runs sequentially or in
/// parallel.
pub fn dataset(n: usize, seed: u64) -> Vec<Sin1dExample> {
    crate::util::parallel_map_indexed(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, i as u64));
        let x: f64 = StandardNormal.sample(&mut rng);
        let p = prob(x);
        let y1 = u8::from(rng.gen::<f64>() < p);
        let y2 = u8::from(rng.gen::<f64>() < p);
        Sin1dExample { x, y1, y2 }
    })
}

/// Draws `n` fresh inputs only.
pub fn sample_inputs(n: usize, seed: u64) -> Vec<f64> {
    crate::util::parallel_map_indexed(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, i as u64));
        StandardNormal.sample(&mut rng)
    })
}

/// The analytic binned pair predictor: inputs grouped into standard-normal
/// quantile bins, each group an explicit mixture over Gauss-Legendre
/// nodes of the bin weighted by the normal density. Exactly second-order
/// calibrated with respect to this discrete grouping by construction.
#[derive(Debug, Clone)]
pub struct BinnedSin1dOracle {
    pub bins: crate::models::tabular::QuantileBins,
    pub groups: Vec<crate::models::tabular::MixtureGroup>,
}

impl BinnedSin1dOracle {
    pub fn new(n_bins: usize, nodes_per_bin: usize) -> Self {
        use crate::dist::ProbVector;
        use crate::models::tabular::{MixtureGroup, QuantileBins};
        let bins = QuantileBins::standard_normal(n_bins);
        let (nodes, node_weights) = crate::util::gauss_legendre(nodes_per_bin);
        let groups = (0..n_bins)
            .map(|b| {
                let (lo, hi) = bins.bounds(b);
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let mut weights = Vec::with_capacity(nodes_per_bin);
                let mut components = Vec::with_capacity(nodes_per_bin);
                for (t, w) in nodes.iter().zip(&node_weights) {
                    let x = mid + half * t;
                    weights.push(w * crate::util::normal_pdf(x));
                    let p = prob(x);
                    components.push(ProbVector::new(vec![1.0 - p, p]).expect("valid Bernoulli"));
                }
                MixtureGroup::new(weights, components).expect("nonempty quadrature group")
            })
            .collect();
        Self { bins, groups }
    }

    pub fn group_of(&self, x: f64) -> usize {
        self.bins.assign(x)
    }

    /// `(p_hat(1|x), v_cheat(1|x))` of the binned predictor.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let g = &self.groups[self.group_of(x)];
        let score = g.cheat_score(1).expect("binary alphabet");
        (score.p_marginal, score.v_cheat)
    }
}
