//! Conditional-independence primitives on covariance matrices and the
//! PC / deterministic-PC structure search.

mod pc;

pub use pc::{combinations_of, dpc, pc, CiDecision, CiOracle, CiSource, PcOutput};

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::linalg;

/// Partial correlation of `i` and `j` given `s`, from the conditional covariance.
///
/// Singular conditioning blocks are handled by the pseudo-inverse. Returns `None`
/// when either conditional variance vanishes, i.e. an endpoint is determined by `s`.
pub fn partial_corr(cov: &DMatrix<f64>, i: usize, j: usize, s: &[usize]) -> Option<f64> {
    let c = linalg::conditional_cov(cov, &[i, j], s);
    let scale = cov[(i, i)].max(cov[(j, j)]).max(f64::MIN_POSITIVE);
    if c[(0, 0)] <= 1e-14 * scale || c[(1, 1)] <= 1e-14 * scale {
        return None;
    }
    Some((c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided standard normal quantile `z_{1 - alpha/2}`.
pub fn normal_critical(alpha: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0)
}

/// Fisher z statistic `sqrt(N - |S| - 3) |atanh r|`; infinite when `|r| = 1`.
pub fn fisher_z_statistic(r: f64, n_samples: usize, cond_size: usize) -> f64 {
    let dof = n_samples as f64 - cond_size as f64 - 3.0;
    if dof <= 0.0 {
        return 0.0;
    }
    if r.abs() >= 1.0 {
        return f64::INFINITY;
    }
    dof.sqrt() * r.atanh().abs()
}

/// Whether `r` is consistent with zero partial correlation at level `alpha`.
pub fn fisher_z_test(r: f64, n_samples: usize, cond_size: usize, alpha: f64) -> bool {
    fisher_z_statistic(r, n_samples, cond_size) <= normal_critical(alpha)
}

/// Whether `target` is (numerically) a linear function of the variables in `s`:
/// the residual variance of regressing it on `s` is at most `tol * Var(target)`.
pub fn is_deterministic(cov: &DMatrix<f64>, target: usize, s: &[usize], tol: f64) -> bool {
    if s.contains(&target) {
        return true;
    }
    let var = cov[(target, target)];
    if var <= 0.0 {
        return true;
    }
    if s.is_empty() {
        return false;
    }
    linalg::conditional_cov(cov, &[target], s)[(0, 0)] <= tol * var
}

/// Determinism tolerance for a covariance estimated from `n_samples` rows.
pub fn sample_determinism_tol(n_samples: usize) -> f64 {
    let n = n_samples.max(2) as f64;
    (10.0 * n.ln() / n).min(0.5)
}

/// Tolerance used on population (exact) covariances.
pub const POPULATION_DETERMINISM_TOL: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_set_gives_plain_correlation() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.2, 1.2, 1.0]);
        assert_relative_eq!(partial_corr(&cov, 0, 1, &[]).unwrap(), 0.6, epsilon = 1e-14);
    }

    #[test]
    fn matches_recursive_formula() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.3, 0.5, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let (r01, r02, r12): (f64, f64, f64) = (0.5, 0.3, 0.4);
        let expected = (r02 - r01 * r12) / ((1.0 - r01 * r01) * (1.0 - r12 * r12)).sqrt();
        assert_relative_eq!(partial_corr(&cov, 0, 2, &[1]).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn fisher_z_examples() {
        assert!(fisher_z_test(0.0, 50, 0, 0.01));
        let stat = fisher_z_statistic(0.1, 100_000, 1);
        assert!((stat - 31.7).abs() < 0.1);
        assert!(!fisher_z_test(0.1, 100_000, 1, 0.01));
        assert!(fisher_z_test(0.005, 1000, 0, 0.01));
        assert_eq!(fisher_z_statistic(1.0, 100, 0), f64::INFINITY);
    }

    #[test]
    fn exact_copy_is_deterministic() {
        // x1 = 2 x0
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(is_deterministic(&cov, 1, &[0], 1e-9));
        assert!(!is_deterministic(&cov, 2, &[0, 1], 1e-9));
        assert!(partial_corr(&cov, 1, 2, &[0]).is_none());
    }
}
