//! Moment statistics and distance correlation.

use crate::ci::normal_critical;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population-style variance (divisor `N`).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Sample excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = (v - m) * (v - m);
        m2 += d;
        m4 += d * d;
    }
    let n = x.len() as f64;
    (m4 / n) / (m2 / n).powi(2) - 3.0
}

/// Standard error of the sample excess kurtosis under Gaussianity.
pub fn kurtosis_se(n: usize) -> f64 {
    (24.0 / n as f64).sqrt()
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

struct Fenwick {
    t: Vec<[f64; 4]>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { t: vec![[0.0; 4]; n + 1] }
    }

    fn add(&mut self, pos: usize, v: [f64; 4]) {
        let mut i = pos + 1;
        while i < self.t.len() {
            for k in 0..4 {
                self.t[i][k] += v[k];
            }
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `< pos`.
    fn prefix(&self, pos: usize) -> [f64; 4] {
        let mut out = [0.0; 4];
        let mut i = pos;
        while i > 0 {
            for k in 0..4 {
                out[k] += self.t[i][k];
            }
            i -= i & i.wrapping_neg();
        }
        out
    }
}

/// Row sums `sum_j |x_i - x_j|` in `O(N log N)`.
fn abs_row_sums(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let total: f64 = x.iter().sum();
    let mut out = vec![0.0; n];
    let mut below = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let above = total - below - x[i];
        out[i] = x[i] * (k as f64) - below + above - x[i] * (n - k - 1) as f64;
        below += x[i];
    }
    out
}

/// `sum_{i,j} |x_i - x_j| |y_i - y_j|` in `O(N log N)`.
fn cross_abs_sum(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut by_y: Vec<usize> = (0..n).collect();
    by_y.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut yrank = vec![0; n];
    for (r, &i) in by_y.iter().enumerate() {
        yrank[i] = r;
    }
    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&a, &b| x[a].total_cmp(&x[b]));

    let mut tree = Fenwick::new(n);
    let mut tot = [0.0; 4];
    let mut sum = 0.0;
    for &i in &by_x {
        let (xi, yi) = (x[i], y[i]);
        let lo = tree.prefix(yrank[i]);
        let hi = [tot[0] - lo[0], tot[1] - lo[1], tot[2] - lo[2], tot[3] - lo[3]];
        // [count, sum x, sum y, sum xy] of earlier-in-x points below / above in y
        let below = lo[0] * xi * yi - xi * lo[2] - yi * lo[1] + lo[3];
        let above = hi[0] * xi * yi - xi * hi[2] - yi * hi[1] + hi[3];
        sum += below - above;
        let v = [1.0, xi, yi, xi * yi];
        tree.add(yrank[i], v);
        for k in 0..4 {
            tot[k] += v[k];
        }
    }
    2.0 * sum
}

/// Squared sample distance covariance (V-statistic) and the two mean distances.
fn dcov_parts(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let a = abs_row_sums(x);
    let b = abs_row_sums(y);
    let (a_tot, b_tot): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let ab: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let v2 = cross_abs_sum(x, y) / (n * n) - 2.0 * ab / (n * n * n) + a_tot * b_tot / (n * n * n * n);
    (v2.max(0.0), a_tot / (n * n), b_tot / (n * n))
}

/// Squared distance covariance of two univariate samples.
pub fn dcov2(x: &[f64], y: &[f64]) -> f64 {
    dcov_parts(x, y).0
}

/// Distance correlation in `[0, 1]`.
pub fn dcor(x: &[f64], y: &[f64]) -> f64 {
    let vxy = dcov2(x, y);
    let denom = (dcov2(x, x) * dcov2(y, y)).sqrt();
    if denom <= 0.0 {
        0.0
    } else {
        (vxy / denom).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcovTest {
    pub dcor: f64,
    /// `N dCov^2 / (mean|x - x'| mean|y - y'|)`
    pub statistic: f64,
    pub critical: f64,
    pub independent: bool,
}

/// Asymptotic distance-covariance independence test: reject when the normalized
/// statistic exceeds the squared two-sided normal quantile.
pub fn dcov_test(x: &[f64], y: &[f64], alpha: f64) -> DcovTest {
    let (v2, ma, mb) = dcov_parts(x, y);
    let statistic = if ma * mb > 0.0 { x.len() as f64 * v2 / (ma * mb) } else { 0.0 };
    let critical = normal_critical(alpha).powi(2);
    DcovTest { dcor: dcor(x, y), statistic, critical, independent: statistic <= critical }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn naive_dcov2(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let d = |v: &[f64]| -> Vec<Vec<f64>> {
            let m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (v[i] - v[j]).abs()).collect()).collect();
            let row: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
            let all = row.iter().sum::<f64>() / n as f64;
            (0..n).map(|i| (0..n).map(|j| m[i][j] - row[i] - row[j] + all).collect()).collect()
        };
        let (a, b) = (d(x), d(y));
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += a[i][j] * b[i][j];
            }
        }
        s / (n * n) as f64
    }

    proptest! {
        #[test]
        fn fast_dcov_matches_double_centering(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let fast = dcov2(&x, &y);
            let slow = naive_dcov2(&x, &y).max(0.0);
            prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()));
        }
    }

    #[test]
    fn handles_ties() {
        let x = [1.0, 1.0, 2.0, 2.0, 3.0];
        let y = [0.0, 1.0, 0.0, 1.0, 5.0];
        assert_relative_eq!(dcov2(&x, &y), naive_dcov2(&x, &y), epsilon = 1e-12);
    }

    #[test]
    fn dcor_of_linear_relation_is_one() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 1.0).collect();
        assert_relative_eq!(dcor(&x, &y), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kurtosis_of_two_point_distribution() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_relative_eq!(excess_kurtosis(&x), -2.0, epsilon = 1e-12);
    }
}
