//! Small dense helpers shared by the estimation modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; conditioning sets are
//! index slices into a covariance matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue cutoff used by the pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Moore-Penrose inverse of a symmetric positive semidefinite matrix.
pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = max * PINV_RCOND;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff && lambda.abs() > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}

/// Covariance of `targets` after linear regression on `given`.
///
/// Singular conditioning blocks are handled by the pseudo-inverse, which is
/// the same as conditioning on a maximal linearly independent subset.
pub fn conditional_cov(cov: &DMatrix<f64>, targets: &[usize], given: &[usize]) -> DMatrix<f64> {
    let ctt = submatrix(cov, targets, targets);
    if given.is_empty() {
        return ctt;
    }
    let cts = submatrix(cov, targets, given);
    let css_pinv = sym_pinv(&submatrix(cov, given, given));
    let out = &ctt - &cts * css_pinv * cts.transpose();
    (&out + out.transpose()) * 0.5
}

/// Minimum-norm coefficients of the population regression of `target` on `given`.
pub fn regression_coeffs(cov: &DMatrix<f64>, target: usize, given: &[usize]) -> DVector<f64> {
    if given.is_empty() {
        return DVector::zeros(0);
    }
    let css_pinv = sym_pinv(&submatrix(cov, given, given));
    let cst = DVector::from_iterator(given.len(), given.iter().map(|&g| cov[(g, target)]));
    css_pinv * cst
}

/// Least-squares fit of `target` (a row vector) by a combination of `basis` rows.
/// Returns the coefficients and the residual vector.
pub fn fit_rows(basis: &[DVector<f64>], target: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if basis.is_empty() {
        return (DVector::zeros(0), target.clone());
    }
    let dim = target.len();
    let m = DMatrix::from_fn(dim, basis.len(), |i, j| basis[j][i]);
    let gram = m.transpose() * &m;
    let coef = sym_pinv(&gram) * (m.transpose() * target);
    let resid = target - &m * &coef;
    (coef, resid)
}

/// `A * diag(d) * A^T`.
pub fn scaled_gram(a: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (j, &dj) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(dj);
    }
    scaled * a.transpose()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Log-determinant of a symmetric positive definite matrix, `None` if not PD.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Numerical rank with a relative singular-value cutoff.
pub fn rank(m: &DMatrix<f64>, rcond: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > max * rcond && s > 0.0).count()
}

/// Empirical covariance (divisor `N`) of the columns of a centered-on-the-fly sample.
pub fn sample_covariance(values: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = values.shape();
    let means: Vec<f64> = (0..cols).map(|j| values.column(j).mean()).collect();
    let mut centered = values.clone();
    for j in 0..cols {
        centered.column_mut(j).add_scalar_mut(-means[j]);
    }
    let c = centered.transpose() * &centered / rows as f64;
    (&c + c.transpose()) * 0.5
}

/// Serde adapter storing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conditional_cov_matches_schur_complement() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.3, 0.6, 1.5, 0.4, 0.3, 0.4, 1.0]);
        let cc = conditional_cov(&cov, &[0, 1], &[2]);
        assert_relative_eq!(cc[(0, 0)], 2.0 - 0.09, epsilon = 1e-12);
        assert_relative_eq!(cc[(0, 1)], 0.6 - 0.12, epsilon = 1e-12);
    }

    #[test]
    fn singular_conditioning_block_uses_independent_subset() {
        // x2 = x0 + x1 exactly, so conditioning on {0,1,2} equals conditioning on {0,1}.
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 0.5, 1.0]);
        let cov = &a * a.transpose();
        let full = conditional_cov(&cov, &[3], &[0, 1, 2]);
        let reduced = conditional_cov(&cov, &[3], &[0, 1]);
        assert_relative_eq!(full[(0, 0)], reduced[(0, 0)], epsilon = 1e-10);
        assert_relative_eq!(full[(0, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn fit_rows_recovers_combination() {
        let b = vec![DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::from_vec(vec![1.0, 1.0, 0.0])];
        let t = DVector::from_vec(vec![3.0, 2.0, 0.0]);
        let (coef, resid) = fit_rows(&b, &t);
        assert_relative_eq!(coef[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(coef[1], 2.0, epsilon = 1e-12);
        assert!(resid.norm() < 1e-12);
    }
}
