//! Closed-form tabular pair models.
//!
//! A tabular model is a grouping function plus one pair joint per group.
//! Built from an oracle, each group's joint is the weighted average of
//! `p p^T` over the group's member conditionals, which is second-order
//! calibrated with respect to that grouping by construction. Built from
//! counts, it is the symmetrized empirical pair frequency.

use std::sync::Arc;

use crate::dist::{JointPairDistribution, ProbVector};
use crate::metrics::CheatScore;
use crate::models::ModelError;
use crate::util::tree_sum;

/// A finite mixture of component conditionals with normalized weights:
/// one equivalence class of an oracle-backed grouping.
#[derive(Debug, Clone)]
pub struct MixtureGroup {
    weights: Vec<f64>,
    components: Vec<ProbVector>,
}

impl MixtureGroup {
    /// Weights are normalized internally; they must be non-negative with
    /// a positive sum.
    pub fn new(weights: Vec<f64>, components: Vec<ProbVector>) -> Result<Self, ModelError> {
        if components.is_empty() {
            return Err(ModelError::EmptyGroup(0));
        }
        if weights.len() != components.len() {
            return Err(ModelError::MismatchedGroup(format!(
                "{} weights vs {} components",
                weights.len(),
                components.len()
            )));
        }
        let k = components[0].len();
        if components.iter().any(|c| c.len() != k) {
            return Err(ModelError::MismatchedGroup("component arity varies".into()));
        }
        let total = tree_sum(&weights);
        if weights.iter().any(|&w| w < 0.0) || total <= 0.0 {
            return Err(ModelError::MismatchedGroup(format!(
                "weights must be non-negative with positive sum, got total {total}"
            )));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { weights, components })
    }

    /// Equal-weight mixture.
    pub fn uniform(components: Vec<ProbVector>) -> Result<Self, ModelError> {
        let n = components.len();
        Self::new(vec![1.0; n.max(1)], components)
    }

    pub fn k(&self) -> usize {
        self.components[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[ProbVector] {
        &self.components
    }

    /// Group mean: the first-order calibrated prediction for this group.
    pub fn mean(&self) -> ProbVector {
        let k = self.k();
        let mut mean = vec![0.0; k];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (m, p) in mean.iter_mut().zip(c.as_slice()) {
                *m += w * p;
            }
        }
        ProbVector::new(mean).expect("convex combination of probability vectors")
    }

    /// The group's pair joint `sum_i w_i p_i p_i^T`.
    pub fn joint(&self, labels: Vec<String>) -> Result<JointPairDistribution, ModelError> {
        let k = self.k();
        let mut matrix = vec![0.0; k * k];
        for (w, c) in self.weights.iter().zip(&self.components) {
            let p = c.as_slice();
            for i in 0..k {
                for j in 0..k {
                    matrix[i * k + j] += w * p[i] * p[j];
                }
            }
        }
        Ok(JointPairDistribution::new(labels, matrix)?)
    }

    pub fn joint_numeric(&self) -> Result<JointPairDistribution, ModelError> {
        self.joint((0..self.k()).map(|i| i.to_string()).collect())
    }

    /// Cheat score for label `y` straight from the mixture.
    pub fn cheat_score(&self, y: usize) -> Result<CheatScore, ModelError> {
        if y >= self.k() {
            return Err(ModelError::LabelOutOfRange { index: y, k: self.k() });
        }
        let probs: Vec<f64> = self.components.iter().map(|c| c.get(y)).collect();
        Ok(CheatScore::from_mixture(y.to_string(), &self.weights, &probs))
    }

    /// Brute-force `E[(mean(y) - p_i(y))^2]` over the components: the
    /// quantity the cheat-corrected variance claims to equal.
    pub fn brute_force_sq_err(&self, y: usize) -> f64 {
        let mean = self.mean().get(y);
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                let d = c.get(y) - mean;
                w * d * d
            })
            .sum()
    }

    /// True when every component with positive weight assigns the same
    /// probability to `y` (the condition under which the confidence is
    /// exactly one).
    pub fn components_agree_at(&self, y: usize, tol: f64) -> bool {
        let mut seen: Option<f64> = None;
        for (w, c) in self.weights.iter().zip(&self.components) {
            if *w == 0.0 {
                continue;
            }
            match seen {
                None => seen = Some(c.get(y)),
                Some(v) => {
                    if (c.get(y) - v).abs() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Samples a component index, then a label from that component.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> usize {
        let mut u: f64 = rng.gen();
        let mut comp = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                comp = i;
                break;
            }
        }
        let p = self.components[comp].as_slice();
        let mut u: f64 = rng.gen();
        for (y, &q) in p.iter().enumerate() {
            u -= q;
            if u < 0.0 {
                return y;
            }
        }
        p.len() - 1
    }
}

/// A grouping function plus one joint per group.
#[derive(Clone)]
pub struct TabularPairModel<X: ?Sized> {
    grouping: Arc<dyn Fn(&X) -> usize + Send + Sync>,
    groups: Vec<JointPairDistribution>,
    grouping_name: String,
}

impl<X: ?Sized> TabularPairModel<X> {
    pub fn new(
        grouping_name: impl Into<String>,
        grouping: impl Fn(&X) -> usize + Send + Sync + 'static,
        groups: Vec<JointPairDistribution>,
    ) -> Self {
        Self {
            grouping: Arc::new(grouping),
            groups,
            grouping_name: grouping_name.into(),
        }
    }

    pub fn group_of(&self, x: &X) -> usize {
        (self.grouping)(x)
    }

    pub fn predict(&self, x: &X) -> &JointPairDistribution {
        &self.groups[self.group_of(x)]
    }

    pub fn groups(&self) -> &[JointPairDistribution] {
        &self.groups
    }

    pub fn grouping_name(&self) -> &str {
        &self.grouping_name
    }
}

impl<X: ?Sized> std::fmt::Debug for TabularPairModel<X> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TabularPairModel")
            .field("grouping", &self.grouping_name)
            .field("n_groups", &self.groups.len())
            .finish()
    }
}

/// Builds the exactly calibrated tabular model for a set of oracle groups.
pub fn tabular_from_oracle<X: ?Sized>(
    groups: &[MixtureGroup],
    labels: Vec<String>,
    grouping_name: impl Into<String>,
    grouping: impl Fn(&X) -> usize + Send + Sync + 'static,
) -> Result<TabularPairModel<X>, ModelError> {
    if groups.is_empty() {
        return Err(ModelError::EmptyGroup(0));
    }
    let joints = groups
        .iter()
        .map(|g| g.joint(labels.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TabularPairModel::new(grouping_name, grouping, joints))
}

/// Empirical maximum-likelihood fit for a fixed grouping: per-group
/// symmetrized pair frequencies with additive smoothing.
pub fn tabular_from_counts<X: ?Sized>(
    records: &[(usize, usize, usize)],
    n_groups: usize,
    labels: Vec<String>,
    smoothing: f64,
    grouping_name: impl Into<String>,
    grouping: impl Fn(&X) -> usize + Send + Sync + 'static,
) -> Result<TabularPairModel<X>, ModelError> {
    let k = labels.len();
    let mut counts = vec![vec![0.0_f64; k * k]; n_groups];
    let mut totals = vec![0usize; n_groups];
    for &(g, y1, y2) in records {
        if y1 >= k || y2 >= k {
            return Err(ModelError::LabelOutOfRange { index: y1.max(y2), k });
        }
        // Symmetrize at the count level: each pair contributes half a
        // count to each orientation.
        counts[g][y1 * k + y2] += 0.5;
        counts[g][y2 * k + y1] += 0.5;
        totals[g] += 1;
    }
    let mut joints = Vec::with_capacity(n_groups);
    for (g, mut m) in counts.into_iter().enumerate() {
        if totals[g] == 0 {
            return Err(ModelError::EmptyGroup(g));
        }
        for v in m.iter_mut() {
            *v += smoothing;
        }
        let total = tree_sum(&m);
        for v in m.iter_mut() {
            *v /= total;
        }
        joints.push(JointPairDistribution::new(labels.clone(), m)?);
    }
    Ok(TabularPairModel::new(grouping_name, grouping, joints))
}

/// Equal-probability bin edges for a standard normal input.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBins {
    /// `n_bins - 1` interior edges, ascending.
    edges: Vec<f64>,
}

impl QuantileBins {
    pub fn standard_normal(n_bins: usize) -> Self {
        let edges = (1..n_bins)
            .map(|i| crate::util::normal_quantile(i as f64 / n_bins as f64))
            .collect();
        Self { edges }
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn assign(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x)
    }

    /// `(lo, hi)` of a bin, with infinite outer edges truncated for
    /// quadrature at +-8.5 standard deviations.
    pub fn bounds(&self, bin: usize) -> (f64, f64) {
        let lo = if bin == 0 { -8.5 } else { self.edges[bin - 1] };
        let hi = if bin == self.edges.len() { 8.5 } else { self.edges[bin] };
        (lo, hi)
    }
}
