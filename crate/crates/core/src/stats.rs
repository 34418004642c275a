//! Summation and test-statistic helpers shared by the estimators and the
//! Monte Carlo verification harness.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Neumaier-compensated accumulator. Long tree sums reach 10^5..10^7 terms;
/// plain summation drifts enough to disturb the rate diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.compensation += other.compensation;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Running mean/variance accumulator over fixed-length vectors, mergeable so
/// chunked parallel scans can be combined in a fixed order.
#[derive(Debug, Clone)]
pub struct VecWelford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecWelford {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &value) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = value - *mean;
            *mean += delta / n;
            *m2 += delta * (value - *mean);
        }
    }

    /// Chan's pairwise merge.
    pub fn merge(&mut self, other: &VecWelford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
            self.mean[i] = (na * self.mean[i] + nb * other.mean[i]) / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean per component.
    pub fn standard_errors(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![f64::NAN; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| (m2 / (n - 1.0) / n).sqrt())
            .collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Centered sample covariance (n-1 denominator) of row-vector samples.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let dim = samples[0].len();
    let mut mu = vec![0.0; dim];
    for s in samples {
        for (m, x) in mu.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for s in samples {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += (s[i] - mu[i]) * (s[j] - mu[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    cov
}

/// Relative Frobenius distance ||a - b||_F / ||b||_F.
pub fn relative_frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            diff += (x - y) * (x - y);
            norm += y * y;
        }
    }
    (diff / norm).sqrt()
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub degrees_of_freedom: u32,
    pub p_value: f64,
}

/// Two-sample chi-square homogeneity test over aligned count histograms.
/// Bins are merged left to right until each carries at least `min_combined`
/// observations, the standard guard against low-expectation cells.
pub fn chi_square_two_sample(
    counts_a: &[u64],
    counts_b: &[u64],
    min_combined: u64,
) -> ChiSquareResult {
    assert_eq!(counts_a.len(), counts_b.len());
    let mut merged: Vec<(u64, u64)> = Vec::new();
    let mut acc = (0u64, 0u64);
    for (&a, &b) in counts_a.iter().zip(counts_b) {
        acc.0 += a;
        acc.1 += b;
        if acc.0 + acc.1 >= min_combined {
            merged.push(acc);
            acc = (0, 0);
        }
    }
    if acc.0 + acc.1 > 0 {
        if let Some(last) = merged.last_mut() {
            last.0 += acc.0;
            last.1 += acc.1;
        } else {
            merged.push(acc);
        }
    }
    let total_a: u64 = merged.iter().map(|c| c.0).sum();
    let total_b: u64 = merged.iter().map(|c| c.1).sum();
    assert!(total_a > 0 && total_b > 0, "empty sample");
    let ka = (total_b as f64 / total_a as f64).sqrt();
    let kb = (total_a as f64 / total_b as f64).sqrt();
    let mut statistic = 0.0;
    let mut df = 0i64;
    for &(a, b) in &merged {
        let combined = (a + b) as f64;
        if combined == 0.0 {
            continue;
        }
        let delta = ka * a as f64 - kb * b as f64;
        statistic += delta * delta / combined;
        df += 1;
    }
    df -= 1;
    let df = df.max(1) as u32;
    let p_value = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(statistic);
    ChiSquareResult {
        statistic,
        degrees_of_freedom: df,
        p_value,
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against the standard normal.
pub fn ks_test_standard_normal(samples: &[f64]) -> KsResult {
    assert!(!samples.is_empty());
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = normal.cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, sorted.len()),
    }
}

/// Asymptotic Kolmogorov distribution tail with the usual finite-sample
/// correction to the argument.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1.0f64).powi(j as i32 - 1) * (-2.0 * j * j * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct SimpleRegression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

/// Ordinary least squares of y on x with classical standard errors.
pub fn simple_regression(xs: &[f64], ys: &[f64]) -> SimpleRegression {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(n >= 3.0, "need at least three points");
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let sigma_sq = rss / (n - 2.0);
    let slope_se = (sigma_sq / sxx).sqrt();
    let intercept_se = (sigma_sq * (1.0 / n + mx * mx / sxx)).sqrt();
    SimpleRegression {
        slope,
        intercept,
        slope_se,
        intercept_se,
    }
}
