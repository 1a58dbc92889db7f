//! Dense least squares for the linear learnability regressors.

use crate::scalar::Scalar;

/// Solves `A x = b` for symmetric positive definite `A` (row-major, n x n).
/// Returns `None` when `A` is not numerically positive definite.
pub fn cholesky_solve<F: Scalar>(a: &[F], b: &[F]) -> Option<Vec<F>> {
    let n = b.len();
    if a.len() != n * n {
        return None;
    }
    let mut l = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= F::zero() || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward: L y = b
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    // backward: L^T x = y
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Ridge regression `min |X w - y|^2 + lambda |w|^2` over rows of `features`.
/// The ridge term keeps the normal equations well posed for never-active features.
pub fn ridge<F: Scalar>(features: &[Vec<F>], targets: &[F], lambda: F) -> Option<Vec<F>> {
    let dim = features.first()?.len();
    let mut gram = vec![F::zero(); dim * dim];
    let mut rhs = vec![F::zero(); dim];
    for (row, &y) in features.iter().zip(targets) {
        for i in 0..dim {
            if row[i] == F::zero() {
                continue;
            }
            rhs[i] += row[i] * y;
            for j in 0..dim {
                gram[i * dim + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..dim {
        gram[i * dim + i] += lambda;
    }
    cholesky_solve(&gram, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 1.0]).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0f64).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0f64).abs() < 1e-12);
        assert!(cholesky_solve(&[0.0f64, 0.0, 0.0, 0.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn ridge_recovers_line() {
        let feats: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        let ys: Vec<f64> = (0..20).map(|i| 3.0 - 0.5 * i as f64).collect();
        let w = ridge(&feats, &ys, 1e-9).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-6 && (w[1] + 0.5).abs() < 1e-6);
    }
}
