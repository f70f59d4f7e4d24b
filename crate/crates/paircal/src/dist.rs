//! Pair-distribution algebra.
//!
//! The central objects are joint distributions over response pairs
//! `(Y1, Y2)` and their second-order form (a marginal plus an epistemic
//! covariance). The two are connected by an exact bijection: the joint
//! minus the outer product of its marginals is the covariance, and adding
//! the outer product back recovers the joint. Binary joints additionally
//! admit a two-parameter `(mu, rho)` form.
//!
//! All types are immutable after construction and all operations are pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-9;
/// Tolerance for round-trip equality between the joint and second-order forms.
pub const ROUND_TRIP_TOL: f64 = 1e-12;
/// Symmetry-defect tolerance for objects built from exact oracles.
pub const SYM_TOL_ORACLE: f64 = 1e-9;
/// Symmetry-defect tolerance for gradient-trained objects.
pub const SYM_TOL_TRAINED: f64 = 1e-6;
/// Largest alphabet accepted by the eigenvalue routines.
pub const MAX_EIGEN_K: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1 within {tol}")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("symmetry defect {defect} exceeds tolerance {tol}")]
    SymmetryViolation { defect: f64, tol: f64 },
    #[error("second-order prediction does not map to a valid joint: {reason}")]
    InvalidSecondOrder { reason: String },
    #[error("expected a binary alphabet, got K={k}")]
    NotBinary { k: usize },
    #[error("off-diagonal entries differ by {defect}, beyond tolerance {tol}")]
    AsymmetricInput { defect: f64, tol: f64 },
    #[error("joint is not positive semidefinite (rho = {rho})")]
    NotPsd { rho: f64 },
    #[error("parameter {name} = {value} is outside [0, 1]")]
    ParamOutOfRange { name: &'static str, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("alphabet size {k} exceeds the validated eigensolver limit {max}")]
    AlphabetTooLarge { k: usize, max: usize },
}

/// A probability vector over an ordered response alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, DistError> {
        for (index, &value) in entries.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(DistError::NegativeEntry { index, value });
            }
        }
        let sum: f64 = crate::util::tree_sum(&entries);
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(DistError::NotNormalized { sum, tol: PROB_TOL });
        }
        Ok(Self { entries })
    }

    /// Point mass on `index` in an alphabet of size `k`.
    pub fn delta(k: usize, index: usize) -> Self {
        let mut entries = vec![0.0; k];
        entries[index] = 1.0;
        Self { entries }
    }

    pub fn uniform(k: usize) -> Self {
        Self { entries: vec![1.0 / k as f64; k] }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = DistError;
    fn try_from(v: Vec<f64>) -> Result<Self, DistError> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.entries
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawJoint {
    labels: Vec<String>,
    /// Row-major `K*K` probabilities; entry `[i*K + j]` is `P(Y1 = labels[i], Y2 = labels[j])`.
    matrix: Vec<f64>,
}

/// A dense joint distribution over response pairs.
///
/// Entries are non-negative and sum to one. Symmetry is *checked*, not
/// enforced: calibrated objects must be symmetric, but trained objects may
/// carry a defect which callers can inspect via [`Self::symmetry_defect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJoint", into = "RawJoint")]
pub struct JointPairDistribution {
    labels: Vec<String>,
    matrix: Vec<f64>,
    k: usize,
}

impl TryFrom<RawJoint> for JointPairDistribution {
    type Error = DistError;
    fn try_from(raw: RawJoint) -> Result<Self, DistError> {
        JointPairDistribution::new(raw.labels, raw.matrix)
    }
}

impl From<JointPairDistribution> for RawJoint {
    fn from(j: JointPairDistribution) -> RawJoint {
        RawJoint { labels: j.labels, matrix: j.matrix }
    }
}

impl JointPairDistribution {
    /// Builds and validates a joint from row-major entries.
    pub fn new(labels: Vec<String>, matrix: Vec<f64>) -> Result<Self, DistError> {
        let k = labels.len();
        if matrix.len() != k * k {
            return Err(DistError::DimensionMismatch(format!(
                "matrix has {} entries, expected {}",
                matrix.len(),
                k * k
            )));
        }
        for (index, &value) in matrix.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(DistError::NegativeEntry { index, value });
            }
        }
        let sum = crate::util::tree_sum(&matrix);
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(DistError::NotNormalized { sum, tol: PROB_TOL });
        }
        Ok(Self { labels, matrix, k })
    }

    /// Same as [`Self::new`] with numeric labels `"0".."K-1"`.
    pub fn from_matrix(matrix: Vec<f64>, k: usize) -> Result<Self, DistError> {
        Self::new((0..k).map(|i| i.to_string()).collect(), matrix)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `P(Y1 = i, Y2 = j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.k + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Maximum absolute difference between the matrix and its transpose.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0_f64;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                d = d.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetry_defect() <= tol
    }

    /// Returns `(J + J^T) / 2` under the same labels.
    pub fn symmetrized(&self) -> Self {
        let k = self.k;
        let matrix = (0..k * k)
            .map(|idx| {
                let (i, j) = (idx / k, idx % k);
                0.5 * (self.get(i, j) + self.get(j, i))
            })
            .collect();
        Self { labels: self.labels.clone(), matrix, k }
    }

    /// Row-sum and column-sum marginals `(Y1, Y2)`.
    pub fn marginals(&self) -> (ProbVector, ProbVector) {
        let k = self.k;
        let mut rows = vec![0.0; k];
        let mut cols = vec![0.0; k];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, col) in cols.iter_mut().enumerate() {
                let v = self.get(i, j);
                *row += v;
                *col += v;
            }
        }
        // Row/column sums of a valid joint are valid probability vectors.
        (
            ProbVector { entries: rows },
            ProbVector { entries: cols },
        )
    }

    /// Pair covariance: `J[i,j] - m1[i] * m2[j]`, row-major.
    pub fn pair_covariance(&self) -> Vec<f64> {
        let (m1, m2) = self.marginals();
        let k = self.k;
        (0..k * k)
            .map(|idx| {
                let (i, j) = (idx / k, idx % k);
                self.get(i, j) - m1.get(i) * m2.get(j)
            })
            .collect()
    }

    /// Splits a symmetric joint into its marginal and epistemic covariance.
    pub fn to_second_order(&self, sym_tol: f64) -> Result<SecondOrderPrediction, DistError> {
        let defect = self.symmetry_defect();
        if defect > sym_tol {
            return Err(DistError::SymmetryViolation { defect, tol: sym_tol });
        }
        let (mean, _) = self.marginals();
        Ok(SecondOrderPrediction {
            covariance: self.pair_covariance(),
            k: self.k,
            mean,
        })
    }

    /// Smallest eigenvalue of the symmetrized matrix. Calibrated joints are
    /// positive semidefinite, so a clearly negative value signals
    /// miscalibration.
    pub fn min_eigenvalue(&self) -> Result<f64, DistError> {
        if self.k > MAX_EIGEN_K {
            return Err(DistError::AlphabetTooLarge { k: self.k, max: MAX_EIGEN_K });
        }
        Ok(linalg::min_eigenvalue(&self.matrix, self.k))
    }

    /// The `(mu, rho)` form of a symmetric, PSD binary joint, with
    /// `mu = P(Y = 1)` and `rho` the pair correlation. `rho = 0` by
    /// convention when `mu` is 0 or 1 (any value reconstructs the same
    /// matrix there).
    pub fn to_binary_params(&self, sym_tol: f64) -> Result<BinaryPairParams, DistError> {
        if self.k != 2 {
            return Err(DistError::NotBinary { k: self.k });
        }
        let defect = (self.get(0, 1) - self.get(1, 0)).abs();
        if defect > sym_tol {
            return Err(DistError::AsymmetricInput { defect, tol: sym_tol });
        }
        let b = 0.5 * (self.get(0, 1) + self.get(1, 0));
        let c = self.get(1, 1);
        let mu = b + c;
        let denom = mu * (1.0 - mu);
        let rho = if denom <= 0.0 { 0.0 } else { 1.0 - b / denom };
        if rho < -PROB_TOL {
            return Err(DistError::NotPsd { rho });
        }
        BinaryPairParams::new(mu.clamp(0.0, 1.0), rho.clamp(0.0, 1.0))
    }
}

/// A marginal prediction plus an epistemic covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSecondOrder", into = "RawSecondOrder")]
pub struct SecondOrderPrediction {
    mean: ProbVector,
    covariance: Vec<f64>,
    k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSecondOrder {
    mean: Vec<f64>,
    /// Row-major `K*K` covariance.
    covariance: Vec<f64>,
}

impl TryFrom<RawSecondOrder> for SecondOrderPrediction {
    type Error = DistError;
    fn try_from(raw: RawSecondOrder) -> Result<Self, DistError> {
        SecondOrderPrediction::new(ProbVector::new(raw.mean)?, raw.covariance)
    }
}

impl From<SecondOrderPrediction> for RawSecondOrder {
    fn from(s: SecondOrderPrediction) -> RawSecondOrder {
        RawSecondOrder { mean: s.mean.entries, covariance: s.covariance }
    }
}

impl SecondOrderPrediction {
    pub fn new(mean: ProbVector, covariance: Vec<f64>) -> Result<Self, DistError> {
        let k = mean.len();
        if covariance.len() != k * k {
            return Err(DistError::DimensionMismatch(format!(
                "covariance has {} entries, expected {}",
                covariance.len(),
                k * k
            )));
        }
        let mut defect = 0.0_f64;
        for i in 0..k {
            for j in (i + 1)..k {
                defect = defect.max((covariance[i * k + j] - covariance[j * k + i]).abs());
            }
        }
        if defect > PROB_TOL {
            return Err(DistError::SymmetryViolation { defect, tol: PROB_TOL });
        }
        for i in 0..k {
            let row: f64 = (0..k).map(|j| covariance[i * k + j]).sum();
            if row.abs() > PROB_TOL {
                return Err(DistError::InvalidSecondOrder {
                    reason: format!("covariance row {i} sums to {row}, expected 0"),
                });
            }
            if covariance[i * k + i] < -PROB_TOL {
                return Err(DistError::InvalidSecondOrder {
                    reason: format!("negative variance {} on the diagonal", covariance[i * k + i]),
                });
            }
        }
        Ok(Self { mean, covariance, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &ProbVector {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance[i * self.k + i]
    }

    /// Inverse of [`JointPairDistribution::to_second_order`]:
    /// `J[i,j] = Sigma[i,j] + mean[i] * mean[j]`. Entries within `-1e-9`
    /// of zero are clamped; anything more negative is an error.
    pub fn to_pair(&self, labels: Vec<String>) -> Result<JointPairDistribution, DistError> {
        let k = self.k;
        if labels.len() != k {
            return Err(DistError::DimensionMismatch(format!(
                "{} labels for K={}",
                labels.len(),
                k
            )));
        }
        let mut matrix = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let v = self.covariance[i * k + j] + self.mean.get(i) * self.mean.get(j);
                if v < -PROB_TOL {
                    return Err(DistError::InvalidSecondOrder {
                        reason: format!("joint entry ({i},{j}) = {v} is negative"),
                    });
                }
                matrix[i * k + j] = v.max(0.0);
            }
        }
        let sum = crate::util::tree_sum(&matrix);
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(DistError::InvalidSecondOrder {
                reason: format!("joint sums to {sum}"),
            });
        }
        Ok(JointPairDistribution { labels, matrix, k })
    }

    /// Same as [`Self::to_pair`] with numeric labels.
    pub fn to_pair_numeric(&self) -> Result<JointPairDistribution, DistError> {
        self.to_pair((0..self.k).map(|i| i.to_string()).collect())
    }
}

/// The `(mu, rho)` parameterization of a calibrated binary pair joint:
/// `mu` is the predicted `P(Y = 1)` and `rho` the correlation between the
/// two responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryPairParams {
    pub mu: f64,
    pub rho: f64,
}

impl BinaryPairParams {
    pub fn new(mu: f64, rho: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(DistError::ParamOutOfRange { name: "mu", value: mu });
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(DistError::ParamOutOfRange { name: "rho", value: rho });
        }
        Ok(Self { mu, rho })
    }

    /// Reconstructs the 2x2 joint
    /// `rho * diag(1-mu, mu) + (1-rho) * q q^T` with `q = (1-mu, mu)`.
    /// Symmetric, non-negative, and PSD by construction.
    pub fn to_joint(self) -> JointPairDistribution {
        let (mu, rho) = (self.mu, self.rho);
        let q0 = 1.0 - mu;
        let off = (1.0 - rho) * q0 * mu;
        let matrix = vec![
            rho * q0 + (1.0 - rho) * q0 * q0,
            off,
            off,
            rho * mu + (1.0 - rho) * mu * mu,
        ];
        JointPairDistribution {
            labels: vec!["0".into(), "1".into()],
            matrix,
            k: 2,
        }
    }

    /// `V_cheat(1) = rho * mu * (1 - mu)` in closed form.
    pub fn v_cheat_one(self) -> f64 {
        self.rho * self.mu * (1.0 - self.mu)
    }
}
