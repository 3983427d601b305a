//! Small numeric helpers shared across modules.

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Pairwise (cascade) summation; deterministic for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

/// Standard normal quantile for the two-sided `level` interval.
pub fn normal_quantile(level: f64) -> f64 {
    if (level - 0.95).abs() < 1e-15 {
        return Z_975;
    }
    use statrs::distribution::{ContinuousCDF, Normal};
    let p = 0.5 + level / 2.0;
    Normal::standard().inverse_cdf(p)
}
