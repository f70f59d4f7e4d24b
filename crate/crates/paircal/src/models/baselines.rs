//! Variance baselines used in the comparison figures.

use crate::models::ModelError;

/// Bernoulli variance `p (1 - p)`: the estimate a model reports when it
/// assumes `Y` is a deterministic function of `X` (all uncertainty
/// aleatoric at the prediction, all residual error epistemic).
pub fn naive_variance(p_hat: f64) -> f64 {
    p_hat * (1.0 - p_hat)
}

/// Ensemble aggregate: mean of the member predictions and the unbiased
/// (n-1 divisor) sample variance across members.
pub fn ensemble_predict(members: &[f64]) -> Result<(f64, f64), ModelError> {
    if members.len() < 2 {
        return Err(ModelError::TooFewMembers(members.len()));
    }
    let n = members.len() as f64;
    let mean = crate::util::tree_mean(members);
    let var = members.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_variance_peaks_at_half() {
        assert_eq!(naive_variance(0.5), 0.25);
        assert_eq!(naive_variance(0.0), 0.0);
        assert_eq!(naive_variance(1.0), 0.0);
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let (mean, var) = ensemble_predict(&[0.4; 8]).unwrap();
        assert_eq!(mean, 0.4);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn two_member_variance_uses_unbiased_divisor() {
        let (mean, var) = ensemble_predict(&[0.4, 0.6]).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);
        // (0.1^2 + 0.1^2) / (2 - 1)
        assert!((var - 0.02).abs() < 1e-15);
    }

    #[test]
    fn eight_members_divide_by_seven() {
        let members: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let (mean, var) = ensemble_predict(&members).unwrap();
        let by_hand: f64 =
            members.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / 7.0;
        assert!((var - by_hand).abs() < 1e-15);
    }

    #[test]
    fn singleton_is_rejected() {
        assert!(matches!(
            ensemble_predict(&[0.5]),
            Err(ModelError::TooFewMembers(1))
        ));
    }
}
