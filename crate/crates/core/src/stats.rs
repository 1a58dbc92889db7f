//! Small descriptive statistics used by the estimator normalization and the summaries.

use crate::scalar::Scalar;

pub fn mean<F: Scalar>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<F>() / F::of(xs.len() as f64))
}

/// Sample standard deviation (n - 1 denominator). Zero for a single sample.
pub fn sample_sd<F: Scalar>(xs: &[F]) -> Option<F> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(F::zero());
    }
    let ss: F = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some((ss / F::of((xs.len() - 1) as f64)).sqrt())
}

/// Standard error of the mean.
pub fn std_error<F: Scalar>(xs: &[F]) -> Option<F> {
    let sd = sample_sd(xs)?;
    Some(sd / F::of(xs.len() as f64).sqrt())
}

/// Linear-interpolated quantile (type 7), `q` in [0, 1].
pub fn quantile<F: Scalar>(xs: &[F], q: f64) -> Option<F> {
    if xs.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = F::of(pos - lo as f64);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn median<F: Scalar>(xs: &[F]) -> Option<F> {
    quantile(xs, 0.5)
}

pub fn iqr<F: Scalar>(xs: &[F]) -> Option<F> {
    Some(quantile(xs, 0.75)? - quantile(xs, 0.25)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let xs = [1.0, 2.0, 3.0];
        assert_eq!(mean(&xs), Some(2.0));
        assert!((std_error(&xs).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(std_error(&[4.0f32]), Some(0.0));
        assert_eq!(mean::<f64>(&[]), None);
    }

    #[test]
    fn quantiles() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&xs), Some(3.0));
        assert_eq!(iqr(&xs), Some(2.0));
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
        assert_eq!(iqr(&[7.0; 4]), Some(0.0));
    }
}
