//! Property-based invariants over the distribution algebra and bounds.

use proptest::prelude::*;

use paircal::dist::{
    BinaryPairParams, JointPairDistribution, ProbVector, SecondOrderPrediction, SYM_TOL_ORACLE,
};
use paircal::distfree;
use paircal::metrics::{cheat_score, chebyshev_interval};
use paircal::models::tabular::MixtureGroup;

/// A random probability vector of length `k` from positive raw weights.
fn prob_vector(k: usize) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(1e-6..1.0_f64, k).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        ProbVector::new(raw.into_iter().map(|v| v / total).collect()).expect("normalized")
    })
}

/// A random mixture group over a k-letter alphabet.
fn mixture(k: usize, max_components: usize) -> impl Strategy<Value = MixtureGroup> {
    (1..=max_components)
        .prop_flat_map(move |n| {
            (
                prop::collection::vec(0.01..1.0_f64, n),
                prop::collection::vec(prob_vector(k), n),
            )
        })
        .prop_map(|(w, c)| MixtureGroup::new(w, c).expect("valid group"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Joint/second-order round trip at mixture-built joints.
    #[test]
    fn second_order_round_trip((k, seed) in (2usize..=10, any::<u32>())) {
        use rand::SeedableRng;
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed as u64);
        let n = rng.gen_range(1..=4);
        let comps: Vec<ProbVector> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-6).collect();
                let total: f64 = raw.iter().sum();
                ProbVector::new(raw.into_iter().map(|v| v / total).collect()).unwrap()
            })
            .collect();
        let group = MixtureGroup::uniform(comps).unwrap();
        let joint = group.joint_numeric().unwrap();
        let back = joint
            .to_second_order(SYM_TOL_ORACLE)
            .unwrap()
            .to_pair_numeric()
            .unwrap();
        for (a, b) in joint.matrix().iter().zip(back.matrix()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        // Calibrated joints are PSD up to numerical noise.
        prop_assert!(joint.min_eigenvalue().unwrap() >= -1e-9);
    }

    /// Zero covariance iff the joint is the product of its marginals.
    #[test]
    fn zero_covariance_iff_product(p in prob_vector(4), q in prob_vector(4)) {
        // Product joint: covariance vanishes.
        let k = 4;
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] = p.get(i) * q.get(j);
            }
        }
        let product = JointPairDistribution::from_matrix(m, k).unwrap();
        for v in product.pair_covariance() {
            prop_assert!(v.abs() <= 1e-9);
        }
    }

    /// A two-component mixture with distinct components is never a
    /// product joint (covariance has a nonzero entry).
    #[test]
    fn mixtures_of_distinct_components_have_covariance(
        a in prob_vector(3),
        b in prob_vector(3),
    ) {
        let spread: f64 = (0..3).map(|i| (a.get(i) - b.get(i)).abs()).sum();
        prop_assume!(spread > 0.05);
        let group = MixtureGroup::uniform(vec![a, b]).unwrap();
        let joint = group.joint_numeric().unwrap();
        let max_cov = joint
            .pair_covariance()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        prop_assert!(max_cov > 1e-9);
    }

    /// Mixture-built covariance equals the brute-force component
    /// covariance entrywise.
    #[test]
    fn mixture_covariance_matches_brute_force(group in mixture(3, 4)) {
        let joint = group.joint_numeric().unwrap();
        let cov = joint.pair_covariance();
        let mean = group.mean();
        for i in 0..3 {
            for j in 0..3 {
                let brute: f64 = group
                    .weights()
                    .iter()
                    .zip(group.components())
                    .map(|(w, c)| w * (c.get(i) - mean.get(i)) * (c.get(j) - mean.get(j)))
                    .sum();
                prop_assert!((cov[i * 3 + j] - brute).abs() <= 1e-12);
            }
        }
    }

    /// Binary parameterization round trip across the whole square.
    #[test]
    fn binary_round_trip(mu in 0.01..0.99_f64, rho in 0.0..=1.0_f64) {
        let joint = BinaryPairParams::new(mu, rho).unwrap().to_joint();
        let back = joint.to_binary_params(SYM_TOL_ORACLE).unwrap();
        prop_assert!((back.mu - mu).abs() <= 1e-10);
        prop_assert!((back.rho - rho).abs() <= 1e-10);
    }

    /// The confidence identity C = (1 + v/p^2)^-1 on mixture joints.
    #[test]
    fn confidence_identity(group in mixture(4, 4)) {
        let joint = group.joint_numeric().unwrap();
        for y in 0..4 {
            let s = cheat_score(&joint, y);
            if s.p_marginal > 1e-12 {
                let identity = 1.0 / (1.0 + s.v_cheat / (s.p_marginal * s.p_marginal));
                prop_assert!((s.confidence - identity).abs() <= 1e-9);
            }
        }
    }

    /// Chebyshev intervals are monotone in beta and always contain the
    /// marginal prediction.
    #[test]
    fn chebyshev_nesting(group in mixture(2, 4), beta in 0.01..0.9_f64) {
        let joint = group.joint_numeric().unwrap();
        let s = cheat_score(&joint, 1);
        let wide = chebyshev_interval(&s, beta).unwrap();
        let narrow = chebyshev_interval(&s, (beta + 0.09).min(0.99)).unwrap();
        prop_assert!(wide.lo <= narrow.lo + 1e-12);
        prop_assert!(narrow.hi <= wide.hi + 1e-12);
        prop_assert!(wide.contains(s.p_marginal.clamp(0.0, 1.0)));
    }

    /// Second-order construction rejects any covariance whose diagonal
    /// dips below the tolerance.
    #[test]
    fn negative_variance_is_rejected(v in 1e-8..0.1_f64) {
        let mean = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let cov = vec![-v, v, v, -v];
        prop_assert!(SecondOrderPrediction::new(mean, cov).is_err());
    }

    /// The distribution-free score is always within [-1/eps, 1/eps] and
    /// the Hoeffding bound sits above the mean by the exact margin.
    #[test]
    fn hoeffding_margin_is_exact(
        records in prop::collection::vec((0.0..=1.0_f64, 0.0..0.3_f64, 0u8..2, 0u8..2), 1..200),
        eps in 0.01..0.5_f64,
        alpha in 0.01..0.5_f64,
    ) {
        let scores: Vec<f64> = records
            .iter()
            .map(|&(p, v, y1, y2)| distfree::score_example(p, v, y1, y2, eps).unwrap())
            .collect();
        for &s in &scores {
            prop_assert!(s.abs() <= 1.0 / eps + 1e-9);
        }
        let upper = distfree::hoeffding_upper(&scores, eps, alpha).unwrap();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let margin = distfree::hoeffding_margin(scores.len(), eps, alpha);
        prop_assert!((upper - mean - margin).abs() <= 1e-9);
    }
}

/// Confidence normalization over every group of the oracle-derived
/// tabular model: all
/// confidences lie in [0, 1], with equality 1 exactly at labels where the
/// group's components agree.
#[test]
fn binned_oracle_groups_are_properly_normalized() {
    let oracle = paircal::tasks::sin1d::BinnedSin1dOracle::new(100, 32);
    for (b, group) in oracle.groups.iter().enumerate() {
        for y in 0..2 {
            let s = group.cheat_score(y).unwrap();
            assert!(
                s.confidence >= 0.0 && s.confidence <= 1.0 + 1e-12,
                "bin {b} label {y}: C = {}",
                s.confidence
            );
            let agree = group.components_agree_at(y, 1e-12);
            if agree {
                assert!((s.confidence - 1.0).abs() <= 1e-9, "bin {b}: agree but C != 1");
            }
            // The conditional oscillates inside every bin, so agreement
            // should essentially never happen; confidence sits below 1.
            let brute = group.brute_force_sq_err(y);
            assert!((s.v_cheat - brute).abs() <= 1e-12);
        }
    }
}

/// The exactly calibrated tabular model beats the naive p(1-p) variance
/// under ECE-2 wherever group variances differ from it (strict ordering
/// on the 1D task).
#[test]
fn oracle_ece2_strictly_beats_naive() {
    let oracle = paircal::tasks::sin1d::BinnedSin1dOracle::new(50, 32);
    let xs = paircal::tasks::sin1d::sample_inputs(20_000, 77);
    let mut cheat = Vec::new();
    let mut naive = Vec::new();
    for &x in &xs {
        let (p_hat, v) = oracle.predict(x);
        let gap = p_hat - paircal::tasks::sin1d::prob(x);
        cheat.push((v, gap * gap));
        naive.push((p_hat * (1.0 - p_hat), gap * gap));
    }
    let (e_cheat, _) = paircal::eval::ece2(&cheat, 50, 1).unwrap();
    let (e_naive, _) = paircal::eval::ece2(&naive, 50, 1).unwrap();
    assert!(
        e_cheat < e_naive,
        "oracle ECE-2 {e_cheat} not strictly below naive {e_naive}"
    );
    assert!(e_naive > 5.0 * e_cheat, "ordering should be decisive, got {e_cheat} vs {e_naive}");
}

/// For an exactly calibrated model with every group variance above the
/// floor, E[S] = E[D] = 1, so gamma approaches 1 from above as N grows.
#[test]
fn gamma_approaches_one_for_calibrated_models() {
    use rand::Rng;
    use rand::SeedableRng;
    let eps = 0.01;
    let mut gammas = Vec::new();
    for (seed, n) in [(1u64, 250_000usize), (2, 1_000_000), (3, 4_000_000)] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<distfree::CalibrationRecord> = (0..n)
            .map(|_| {
                // Two equivalence classes of unknown coins: biases
                // {0.2, 0.8} (variance 0.09) or {0, 1} (variance 0.25).
                let (p, v) = if rng.gen::<bool>() {
                    (if rng.gen::<bool>() { 0.2 } else { 0.8 }, 0.09)
                } else {
                    (if rng.gen::<bool>() { 0.0 } else { 1.0 }, 0.25)
                };
                let y1 = u8::from(rng.gen::<f64>() < p);
                let y2 = u8::from(rng.gen::<f64>() < p);
                distfree::CalibrationRecord { p_hat: 0.5, v_hat: v, y1, y2 }
            })
            .collect();
        let report = distfree::adjust(&records, eps, 0.05).unwrap();
        // mean_s is an unbiased estimate of E[D] = 1.
        assert!((report.mean_s - 1.0).abs() < 0.02, "mean_s = {}", report.mean_s);
        assert!(report.gamma_plus > 1.0);
        gammas.push(report.gamma_plus);
    }
    assert!(gammas[0] > gammas[1] && gammas[1] > gammas[2], "gammas: {gammas:?}");
    assert!(gammas[2] < 1.2, "gamma at N = 4e6 should be near 1, got {}", gammas[2]);
}

/// A model that claims enormous variance everywhere gets gamma <= 1 plus
/// the margin: the normalized scores all shrink toward zero.
#[test]
fn huge_variance_claims_cap_gamma() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let records: Vec<distfree::CalibrationRecord> = (0..100_000)
        .map(|_| {
            let p = rng.gen::<f64>();
            let y1 = u8::from(rng.gen::<f64>() < p);
            let y2 = u8::from(rng.gen::<f64>() < p);
            distfree::CalibrationRecord { p_hat: 0.5, v_hat: 1e6, y1, y2 }
        })
        .collect();
    let eps = 0.01;
    let report = distfree::adjust(&records, eps, 0.05).unwrap();
    assert!(report.mean_s.abs() < 1e-5);
    assert!(report.gamma_plus <= 1.0 + distfree::hoeffding_margin(records.len(), eps, 0.05));
}

/// Training the K-class head with the eigenvalue penalty keeps the
/// output joints positive semidefinite within tolerance.
#[test]
fn kclass_training_with_penalty_stays_psd() {
    use paircal::models::mlp::{HeadKind, MlpConfig, MlpPairModel};
    use paircal::models::train::{train, TrainConfig};
    use rand::Rng;
    use rand::SeedableRng;

    // Contexts x < 0 have a known 3-class conditional; x >= 0 mix two
    // opposing deterministic labelers, so the pair data is correlated.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut data = Vec::new();
    for _ in 0..20_000 {
        let x: f64 = rng.gen_range(-1.0..1.0);
        if x < 0.0 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let u: f64 = rng.gen();
                if u < 0.6 { 0 } else if u < 0.9 { 1 } else { 2 }
            };
            let (y1, y2) = (draw(&mut rng), draw(&mut rng));
            data.push((x, y1, y2));
        } else {
            let label = if rng.gen::<bool>() { 1 } else { 2 };
            data.push((x, label, label));
        }
    }
    let config = MlpConfig {
        hidden_width: 48,
        stream_width: 24,
        blocks: 2,
        head: HeadKind::SymmetricSoftmax { k: 3 },
        eigen_penalty_weight: 10.0,
    };
    let train_config = TrainConfig {
        iterations: 6_000,
        batch_size: 128,
        max_learning_rate: 3e-3,
        warmup_steps: 100,
        weight_decay: 1e-4,
        seed: 3,
        log_every: 1000,
    };
    let full_loss = |m: &MlpPairModel| {
        let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
        let y1s: Vec<usize> = data.iter().map(|d| d.1).collect();
        let y2s: Vec<usize> = data.iter().map(|d| d.2).collect();
        m.pair_nll_loss(&xs, &y1s, &y2s).unwrap().loss
    };
    let init = MlpPairModel::init(config, 3);
    let loss_before = full_loss(&init);
    let result = train(init, &data, &train_config).unwrap();
    let loss_after = full_loss(&result.model);
    assert!(
        loss_after < loss_before,
        "training should reduce the loss ({loss_before} -> {loss_after})"
    );
    // Matched run without the penalty, for contrast.
    let plain_config = MlpConfig { eigen_penalty_weight: 0.0, ..config };
    let plain = train(MlpPairModel::init(plain_config, 3), &data, &train_config).unwrap();

    let worst_eig = |m: &MlpPairModel, xs: &[f64]| {
        xs.iter()
            .map(|&x| m.forward(x).unwrap().min_eigenvalue().unwrap())
            .fold(f64::INFINITY, f64::min)
    };
    // In the correlated regime the fitted joint is diagonal-dominant and
    // comfortably PSD.
    let correlated = [0.1, 0.5, 0.9];
    assert!(worst_eig(&result.model, &correlated) >= -1e-6);
    // In the independent regime the target joint is rank one, so the NLL
    // optimum tracks the empirical pair matrix whose smallest eigenvalue
    // is -O(1/sqrt(n)) sampling noise; the penalty pulls the equilibrium
    // several-fold closer to zero but cannot beat the data. Assert the
    // noise-scale bound and the improvement over the unpenalized run.
    let independent = [-0.9, -0.5, -0.1];
    let penalized = worst_eig(&result.model, &independent);
    let unpenalized = worst_eig(&plain.model, &independent);
    assert!(penalized >= -0.01, "penalized min eigenvalue {penalized}");
    assert!(
        penalized > unpenalized,
        "penalty should raise the worst eigenvalue: {penalized} vs {unpenalized}"
    );
    for &x in &[-0.9, -0.05, 0.5, 0.95] {
        assert!(result.model.forward(x).unwrap().symmetry_defect() < 1e-12);
    }
}

/// Monotonicity of the adjusted bound in N, averaged over redraws: the
/// Hoeffding margin shrinks as n^{-1/2} while the mean stays put.
#[test]
fn gamma_shrinks_with_more_data_on_average() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let eps = 0.02 * 0.02;
    let mut means = Vec::new();
    for n in [1_000usize, 4_000, 16_000] {
        let mut total = 0.0;
        let runs = 5;
        for _ in 0..runs {
            let records: Vec<distfree::CalibrationRecord> = (0..n)
                .map(|_| {
                    let p = 0.3 + 0.4 * rng.gen::<f64>();
                    let y1 = u8::from(rng.gen::<f64>() < p);
                    let y2 = u8::from(rng.gen::<f64>() < p);
                    distfree::CalibrationRecord { p_hat: p, v_hat: 0.0, y1, y2 }
                })
                .collect();
            total += distfree::adjust(&records, eps, 0.05).unwrap().gamma_plus;
        }
        means.push(total / runs as f64);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "gamma means: {means:?}");
}

/// Bin-level hallucination bound on an exactly calibrated discrete mixture:
/// per-confidence-bin hallucination rate is bounded by 1 minus the bin's
/// lower edge.
#[test]
fn hallucination_bound_at_bin_level() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    // Contexts: an unknown digit taking one of `m` values; the model
    // samples any value uniformly. A sample is a hallucination when it
    // differs from the true latent value.
    let mut samples: Vec<(f64, bool)> = Vec::new();
    for _ in 0..200_000 {
        let m = [1usize, 2, 4, 10][rng.gen_range(0..4)];
        let truth = rng.gen_range(0..m);
        let drawn = rng.gen_range(0..m);
        let confidence = 1.0 / m as f64; // exact mixture confidence
        samples.push((confidence, drawn != truth));
    }
    let bins = 10;
    let mut count = vec![0usize; bins];
    let mut halluc = vec![0usize; bins];
    for &(conf, h) in &samples {
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        halluc[b] += usize::from(h);
    }
    for b in 0..bins {
        if count[b] < 100 {
            continue;
        }
        let bound = 1.0 - b as f64 / bins as f64;
        let rate = halluc[b] as f64 / count[b] as f64;
        let slack = 3.0 * (0.25 / count[b] as f64).sqrt();
        assert!(rate <= bound + slack, "bin {b}: {rate} > {bound} + {slack}");
    }
}
