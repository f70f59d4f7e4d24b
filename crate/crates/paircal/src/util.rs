//! Shared numeric and concurrency helpers.
//!
//! Summation uses pairwise tree reduction so results are bit-identical
//! regardless of how work is chunked across threads.

use std::num::NonZeroUsize;

/// Pairwise tree-reduced sum. Deterministic for a fixed input order and
/// more accurate than naive left-to-right accumulation for long inputs.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            tree_sum(&values[..mid]) + tree_sum(&values[mid..])
        }
    }
}

/// Mean via [`tree_sum`].
pub fn tree_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    tree_sum(values) / values.len() as f64
}

/// Worker cap: `PAIRCAL_THREADS` if set and valid, otherwise the number of
/// available cores.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("PAIRCAL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
}

/// Applies `f` to every index in `0..n`, possibly across threads, and
/// returns results in index order. Output is identical for any worker
/// count because each index is computed independently.
pub fn parallel_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count().min(n.max(1));
    if workers <= 1 || n < 2 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut out: Vec<Option<T>> = Vec::with_capacity(n);
    out.resize_with(n, || None);
    let slots: Vec<(usize, &mut [Option<T>])> = {
        let mut rest = out.as_mut_slice();
        let mut slots = Vec::new();
        let mut start = 0;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            slots.push((start, head));
            start += take;
            rest = tail;
        }
        slots
    };
    std::thread::scope(|scope| {
        for (start, slot) in slots {
            let f = &f;
            scope.spawn(move || {
                for (offset, cell) in slot.iter_mut().enumerate() {
                    *cell = Some(f(start + offset));
                }
            });
        }
    });
    out.into_iter().map(|v| v.expect("worker filled slot")).collect()
}

/// Derives a decorrelated per-stream seed from a base seed and stream
/// index (SplitMix64 finalizer). Parallel generation of stream `i` is
/// byte-identical to sequential generation.
pub fn substream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Numerically stable softplus scaled by `beta`: `beta * ln(1 + exp(z / beta))`.
pub fn softplus_scaled(z: f64, beta: f64) -> f64 {
    let t = z / beta;
    if t > 30.0 {
        z
    } else if t < -30.0 {
        beta * t.exp()
    } else {
        beta * t.exp().ln_1p()
    }
}

/// Stable `tau * log(sum(exp(v / tau)))`.
pub fn logsumexp_scaled(values: &[f64], tau: f64) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| ((v - m) / tau).exp()).sum();
    m + tau * s.ln()
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// |relative error| < 1.15e-9). Plenty for placing quantile-bin edges.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p = {p} outside (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_matches_naive_on_small_inputs() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(tree_sum(&v), 15.0);
        assert_eq!(tree_sum(&[]), 0.0);
    }

    #[test]
    fn tree_sum_is_chunking_invariant() {
        let v: Vec<f64> = (0..1000).map(|i| ((i * 2654435761_u64 as usize) % 997) as f64 / 997.0).collect();
        let total = tree_sum(&v);
        // Identical value no matter how callers later split the work,
        // because the reduction tree depends only on element order.
        let again = tree_sum(&v);
        assert_eq!(total.to_bits(), again.to_bits());
    }

    #[test]
    fn parallel_map_is_order_preserving() {
        let got = parallel_map_indexed(100, |i| i * i);
        let want: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!(softplus_scaled(1e6, 0.2).is_finite());
        assert!(softplus_scaled(-1e6, 0.2) >= 0.0);
        let z = 0.37_f64;
        let naive = 0.2 * (1.0 + (z / 0.2).exp()).ln();
        assert!((softplus_scaled(z, 0.2) - naive).abs() < 1e-12);
    }

    #[test]
    fn substreams_differ() {
        let a = substream_seed(7, 0);
        let b = substream_seed(7, 1);
        assert_ne!(a, b);
    }

    #[test]
    fn normal_quantile_matches_known_points() {
        assert!(normal_quantile(0.5).abs() < 1e-9);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-7);
        assert!((normal_quantile(0.0013498980316300933) - (-3.0)).abs() < 1e-6);
    }

    #[test]
    fn gauss_legendre_five_points() {
        let (x, w) = gauss_legendre(5);
        // Known 5-point rule values.
        assert!((x[0] + 0.906179845938664).abs() < 1e-12);
        assert!((x[2]).abs() < 1e-12);
        assert!((w[0] - 0.236926885056189).abs() < 1e-12);
        assert!((w[2] - 0.568888888888889).abs() < 1e-12);
        // Integrates x^8 over [-1, 1] exactly (degree <= 2n-1).
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_normal_mass() {
        let (x, w) = gauss_legendre(96);
        // Map [-1,1] to [-8,8]; total normal mass is 1 to ~1e-15.
        let integral: f64 = x
            .iter()
            .zip(&w)
            .map(|(x, w)| 8.0 * w * normal_pdf(8.0 * x))
            .sum();
        assert!((integral - 1.0).abs() < 1e-12);
    }
}
