//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Matrices here are at most a few dozen rows (joint distributions over a
//! response alphabet), so the classic Jacobi method is a good fit: it is
//! dependency-free, unconditionally stable for symmetric input, and
//! deterministic because the sweep order is fixed.

/// Off-diagonal Frobenius threshold at which a sweep is considered converged.
pub const JACOBI_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues sorted ascending.
    pub values: Vec<f64>,
    /// `vectors[i]` is the unit eigenvector for `values[i]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Decomposes the symmetric `n x n` matrix `a` (row-major). The input is
/// symmetrized as `(A + A^T) / 2` first, so tiny asymmetries from
/// floating-point noise do not matter.
pub fn sym_eigen(a: &[f64], n: usize) -> SymEigen {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    let mut m: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            0.5 * (a[i * n + j] + a[j * n + i])
        })
        .collect();
    // v starts as identity; accumulates rotations column-wise.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-angle root of t^2 + 2*theta*t - 1 = 0.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|row| v[row * n + col]).collect())
        .collect();
    SymEigen { values, vectors }
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    sym_eigen(a, n).values[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn two_by_two_closed_form() {
        // eig([[0.1,0.2],[0.2,0.5]]) = (0.6 +- sqrt(0.32)) / 2
        let a = [0.1, 0.2, 0.2, 0.5];
        let e = sym_eigen(&a, 2);
        let lo = (0.6 - 0.32_f64.sqrt()) / 2.0;
        let hi = (0.6 + 0.32_f64.sqrt()) / 2.0;
        assert!((e.values[0] - lo).abs() < 1e-12);
        assert!((e.values[1] - hi).abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrix() {
        let a = [0.5, 0.0, 0.0, 0.5];
        assert!((min_eigenvalue(&a, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rank_one_uniform() {
        let a = [0.25; 4];
        assert!(min_eigenvalue(&a, 2).abs() < 1e-12);
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        // Fixed pseudo-random symmetric 6x6.
        let n = 6;
        let mut a = vec![0.0; n * n];
        let mut state = 0x2545f4914f6cdd1d_u64;
        for i in 0..n {
            for j in i..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let x = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let e = sym_eigen(&a, n);
        for (lam, vec) in e.values.iter().zip(&e.vectors) {
            let av = matvec(&a, n, vec);
            for (x, y) in av.iter().zip(vec) {
                assert!((x - lam * y).abs() < 1e-9, "A v != lambda v");
            }
        }
        // Ascending order.
        for w in e.values.windows(2) {
            assert!(w[0] <= w[1] + 1e-15);
        }
    }
}
