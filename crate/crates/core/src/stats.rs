//! Normal distribution helpers and deterministic Monte Carlo reductions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise (cascade) summation. The result depends only on the slice
/// contents and order, never on how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_err: f64::NAN, n };
        }
        let mean = pairwise_sum(values) / n as f64;
        if n == 1 {
            return Self { mean, std_err: f64::NAN, n };
        }
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self { mean, std_err: (var / n as f64).sqrt(), n }
    }

    /// Standardised distance of the mean from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_err
    }
}

/// Ratio estimator `mean(num) / sqrt(mean(den))` with a delta-method
/// standard error, used for Sharpe-type statistics.
pub fn ratio_to_root(num: &[f64], den: &[f64]) -> Estimate {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let a = Estimate::from_samples(num);
    let b = Estimate::from_samples(den);
    let ratio = a.mean / b.mean.sqrt();
    // gradient of f(a, b) = a / sqrt(b)
    let ga = 1.0 / b.mean.sqrt();
    let gb = -0.5 * a.mean / b.mean.powf(1.5);
    let lin: Vec<f64> = num.iter().zip(den).map(|(x, y)| ga * (x - a.mean) + gb * (y - b.mean)).collect();
    let sq: Vec<f64> = lin.iter().map(|v| v * v).collect();
    let var = pairwise_sum(&sq) / (n.max(2) - 1) as f64;
    Estimate { mean: ratio, std_err: (var / n as f64).sqrt(), n }
}
