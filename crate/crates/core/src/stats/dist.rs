//! Empirical distributions, Kolmogorov distance and interval estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRole};

pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput("empirical distribution needs at least two values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample value".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        mean(&self.sorted)
    }

    pub fn variance(&self) -> f64 {
        variance(&self.sorted)
    }

    /// Fraction of values `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.sorted.iter().map(|&v| f(v)).collect())
    }
}

/// `sup_x |F_N(x) - cdf(x)|`, attained at a jump point.
pub fn kolmogorov_distance(sample: &EmpiricalDistribution, cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sample.len() as f64;
    let v = &sample.sorted;
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        // Ties form a single jump.
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let c = cdf(v[i]);
        best = best.max((c - i as f64 / n).abs()).max(((j + 1) as f64 / n - c).abs());
        i = j + 1;
    }
    best
}

pub fn normal_cdf(sigma: f64) -> impl Fn(f64) -> f64 {
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    move |x| n.cdf(x)
}

/// Asymptotic two-sided Kolmogorov-Smirnov critical value at level `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Standard error of the sample variance from the fourth central moment.
pub fn variance_se(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = mean(v);
    let s2 = variance(v);
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Mean with a normal 95% interval.
pub fn mean_estimate(v: &[f64]) -> Estimate {
    let m = mean(v);
    let se = (variance(v) / v.len() as f64).sqrt();
    Estimate { value: m, se, lo: m - Z95 * se, hi: m + Z95 * se }
}

/// Sample variance with a chi-square 95% interval.
pub fn variance_estimate(v: &[f64]) -> Estimate {
    let s2 = variance(v);
    let k = v.len() as f64 - 1.0;
    let chi = ChiSquared::new(k).expect("at least two values");
    Estimate {
        value: s2,
        se: variance_se(v),
        lo: k * s2 / chi.inverse_cdf(0.975),
        hi: k * s2 / chi.inverse_cdf(0.025),
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Resampled index sets, reproducible from `seed`.
pub fn bootstrap_indices(n: usize, resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..resamples as u64)
        .map(|b| {
            let mut rng = stream(seed, b, StreamRole::Bootstrap);
            (0..n).map(|_| rng.random_range(0..n)).collect()
        })
        .collect()
}

/// Percentile interval of `stats` at 95%.
pub fn percentile_interval(stats: &[f64]) -> (f64, f64) {
    let mut s: Vec<f64> = stats.iter().copied().filter(|v| v.is_finite()).collect();
    if s.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < s.len() {
            s[i] * (1.0 - f) + s[i + 1] * f
        } else {
            s[i]
        }
    };
    (q(0.025), q(0.975))
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn point_mass_against_normal() {
        let e = EmpiricalDistribution::new(vec![0.0, 0.0]).unwrap();
        assert_relative_eq!(kolmogorov_distance(&e, normal_cdf(1.0)), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quantile_sample_is_close() {
        let n = 200;
        let norm = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (1..=n).map(|i| norm.inverse_cdf((i as f64 - 0.5) / n as f64)).collect();
        let e = EmpiricalDistribution::new(v).unwrap();
        assert!(kolmogorov_distance(&e, normal_cdf(1.0)) <= 0.5 / n as f64 + 1e-9);
    }

    #[test]
    fn wilson_contains_proportion() {
        let (lo, hi) = wilson_interval(30, 100, Z95);
        assert!(lo < 0.3 && hi > 0.3);
        assert_relative_eq!(lo, 0.2189, epsilon = 1e-3);
        assert_eq!(wilson_interval(0, 50, Z95).0, 0.0);
    }

    #[test]
    fn chi_square_interval_brackets() {
        let v: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin()).collect();
        let e = variance_estimate(&v);
        assert!(e.lo < e.value && e.value < e.hi);
    }

    #[test]
    fn ks_critical_one_percent() {
        assert_relative_eq!(ks_critical(1, 0.01), 1.6276, epsilon = 1e-4);
    }
}
