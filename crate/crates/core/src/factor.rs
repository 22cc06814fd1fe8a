//! Gaussian factor analysis `X = L f + N` fitted by EM.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaConfig {
    pub max_iter: usize,
    /// Stop when the relative change in log-likelihood falls below this.
    pub rel_tol: f64,
    /// Floor on `psi`, relative to the largest diagonal entry of the covariance.
    pub psi_floor: f64,
    /// When set, also require the largest change in `psi` to fall below this
    /// fraction of the largest diagonal entry.
    pub psi_tol: Option<f64>,
}

impl Default for FaConfig {
    fn default() -> Self {
        FaConfig { max_iter: 5000, rel_tol: 1e-8, psi_floor: 1e-6, psi_tol: None }
    }
}

impl FaConfig {
    /// Tight stopping rule for exact covariances, where the fit should
    /// reproduce the generating parameters.
    pub fn population() -> Self {
        FaConfig { max_iter: 200_000, rel_tol: 1e-14, psi_floor: 1e-6, psi_tol: Some(1e-13) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaFit {
    /// `n x r`, identified up to right-orthogonal transforms.
    #[serde(with = "linalg::serde_rows")]
    pub l: DMatrix<f64>,
    pub psi: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub r: usize,
    pub iterations: usize,
    /// Entries of `psi` held at the floor.
    pub at_floor: Vec<usize>,
    /// Log-likelihood never decreased between iterations.
    pub monotone: bool,
}

/// `(phi(n), c(n))`: largest factor count with generic identifiability and the
/// smallest leaf fraction that keeps `n - l` below it.
pub fn identifiability_thresholds(n: usize) -> (f64, f64) {
    let nf = n as f64;
    let root = (8.0 * nf + 1.0).sqrt();
    ((2.0 * nf + 1.0 - root) / 2.0, (root - 1.0) / (2.0 * nf))
}

/// Free parameters of an `r`-factor model on `n` variables.
pub fn free_parameters(n: usize, r: usize) -> usize {
    n * r + n - r * r.saturating_sub(1) / 2
}

fn gaussian_loglik(cov: &DMatrix<f64>, sigma: &DMatrix<f64>, n_samples: usize) -> Option<f64> {
    let n = cov.nrows() as f64;
    let chol = sigma.clone().cholesky()?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol.solve(cov).trace();
    Some(-0.5 * n_samples as f64 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + trace))
}

fn model_cov(l: &DMatrix<f64>, psi: &[f64]) -> DMatrix<f64> {
    let mut s = l * l.transpose();
    for (i, p) in psi.iter().enumerate() {
        s[(i, i)] += p;
    }
    s
}

/// Principal-axis start: communalities from squared multiple correlations,
/// loadings from the top `r` eigenpairs of the reduced covariance.
fn principal_axis_start(cov: &DMatrix<f64>, r: usize, floor: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = cov.nrows();
    let psi: Vec<f64> = match cov.clone().try_inverse() {
        Some(inv) if (0..n).all(|i| inv[(i, i)] > 0.0) => (0..n).map(|i| (1.0 / inv[(i, i)]).max(floor)).collect(),
        _ => (0..n).map(|i| (0.5 * cov[(i, i)]).max(floor)).collect(),
    };
    let mut reduced = cov.clone();
    for i in 0..n {
        reduced[(i, i)] -= psi[i];
    }
    let eig = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l = DMatrix::from_fn(n, r, |i, k| {
        let j = order[k];
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(1e-3 * floor.max(1e-12)).sqrt()
    });
    (l, psi)
}

/// Maximum-likelihood factor analysis of a covariance matrix from `n_samples` rows.
pub fn fa_fit(cov: &DMatrix<f64>, n_samples: usize, r: usize) -> Result<FaFit> {
    fa_fit_with(cov, n_samples, r, &FaConfig::default())
}

pub fn fa_fit_with(cov: &DMatrix<f64>, n_samples: usize, r: usize, cfg: &FaConfig) -> Result<FaFit> {
    let n = cov.nrows();
    if !cov.is_square() || n < 2 {
        return Err(Error::Config("covariance must be square with at least two variables".into()));
    }
    if r == 0 || r >= n {
        return Err(Error::Config(format!("factor count must lie in [1, {}], got {r}", n - 1)));
    }
    let max_diag = (0..n).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let floor = cfg.psi_floor * max_diag;
    let (mut l, mut psi) = principal_axis_start(cov, r, floor);
    let eye = DMatrix::<f64>::identity(r, r);

    let mut ll = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let sigma = model_cov(&l, &psi);
        let Some(sigma_inv) = sigma.clone().cholesky().map(|c| c.inverse()) else {
            return Err(Error::Inconsistency("factor model covariance lost positive definiteness".into()));
        };
        let beta = l.transpose() * &sigma_inv;
        let bs = &beta * cov;
        let ezz = &eye - &beta * &l + &bs * beta.transpose();
        let Some(ezz_inv) = ezz.clone().cholesky().map(|c| c.inverse()) else {
            return Err(Error::Inconsistency("singular factor second moment".into()));
        };
        l = cov * beta.transpose() * ezz_inv;
        let lbs = &l * &bs;
        let next: Vec<f64> = (0..n).map(|i| (cov[(i, i)] - lbs[(i, i)]).max(floor)).collect();
        let step = next.iter().zip(&psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        psi = next;

        let new_ll = gaussian_loglik(cov, &model_cov(&l, &psi), n_samples).unwrap_or(f64::NEG_INFINITY);
        if new_ll < ll - 1e-9 * ll.abs().max(1.0) {
            monotone = false;
        }
        let done = ll.is_finite()
            && (new_ll - ll).abs() < cfg.rel_tol * ll.abs().max(1e-300)
            && cfg.psi_tol.is_none_or(|t| step <= t * max_diag);
        ll = new_ll;
        if done {
            converged = true;
            break;
        }
    }
    let bic = -2.0 * ll + free_parameters(n, r) as f64 * (n_samples as f64).ln();
    let at_floor = (0..n).filter(|&i| psi[i] <= floor).collect();
    let fit = FaFit { l, psi, loglik: ll, bic, r, iterations, at_floor, monotone };
    if !converged {
        return Err(Error::NotConverged {
            what: "factor analysis",
            iterations,
            best: serde_json::to_value(&fit).ok().map(Box::new),
        });
    }
    Ok(fit)
}

/// BIC-minimizing factor count among `candidates`, with every successful fit.
pub fn select_num_factors(cov: &DMatrix<f64>, n_samples: usize, candidates: &[usize]) -> Result<(usize, Vec<FaFit>)> {
    let mut fits = Vec::new();
    for &r in candidates {
        match fa_fit(cov, n_samples, r) {
            Ok(f) => fits.push(f),
            Err(Error::NotConverged { best: Some(b), .. }) => {
                if let Ok(f) = serde_json::from_value::<FaFit>(*b) {
                    fits.push(f);
                }
            }
            Err(e) => return Err(e),
        }
    }
    let best = fits
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.r.cmp(&b.r)))
        .ok_or_else(|| Error::Config("no candidate factor count".into()))?;
    Ok((best.r, fits))
}

/// `L L^T`, the implied covariance of the shared part.
pub fn recovered_xstar_cov(fit: &FaFit) -> DMatrix<f64> {
    &fit.l * fit.l.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thresholds() {
        let (_, c4) = identifiability_thresholds(4);
        assert!((c4 - 0.593).abs() < 0.001);
        let (_, c100) = identifiability_thresholds(100);
        assert!((c100 - 0.136).abs() < 0.001);
        assert_relative_eq!(identifiability_thresholds(6).1, 0.5, epsilon = 1e-15);
        let (phi2, _) = identifiability_thresholds(2);
        assert!((phi2 - 0.4384).abs() < 1e-3);
        for n in 1..50 {
            let (phi, c) = identifiability_thresholds(n);
            assert_relative_eq!(c, 1.0 - phi / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_covariance_gives_zero_loadings() {
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 0.5]));
        let fit = fa_fit(&cov, 1000, 1).unwrap();
        assert!(fit.l.amax() < 1e-3);
        for (p, d) in fit.psi.iter().zip([1.0, 2.0, 3.0, 0.5]) {
            assert!((p - d).abs() < 1e-5);
        }
    }

    #[test]
    fn single_factor_population_fixed_point() {
        let l = DMatrix::from_column_slice(4, 1, &[0.9, 0.8, 0.7, 0.6]);
        let psi = [0.3, 0.4, 0.5, 0.6];
        let cov = model_cov(&l, &psi);
        let fit = fa_fit_with(&cov, 100_000, 1, &FaConfig::population()).unwrap();
        assert!(fit.monotone);
        assert!(linalg::max_abs_diff(&recovered_xstar_cov(&fit), &(&l * l.transpose())) < 1e-5);
        for (a, b) in fit.psi.iter().zip(psi) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_factor_count() {
        let cov = DMatrix::identity(3, 3);
        assert!(matches!(fa_fit(&cov, 10, 3), Err(Error::Config(_))));
        assert!(matches!(fa_fit(&cov, 10, 0), Err(Error::Config(_))));
    }
}
