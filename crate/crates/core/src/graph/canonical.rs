//! The canonical representation `X = A_nl E~_nl + E*`.
//!
//! Noise terms of leaf nodes only ever reach their own variable, so they are
//! indistinguishable from measurement error and fold into `E*`. What remains
//! shared between variables is carried by the non-leaf noise columns `A_nl`.

use nalgebra::{DMatrix, DVector};

use super::model::CammeModel;
use crate::error::Result;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalRep {
    /// `n x (n - l)`: columns of the mixing matrix for non-leaf noise terms.
    pub a_nl: DMatrix<f64>,
    /// `n x l`: one unit entry per column, marking the leaf each noise term feeds.
    pub a_l: DMatrix<f64>,
    /// `Var(E*_i)`.
    pub estar_variances: Vec<f64>,
    pub leaf_set: Vec<usize>,
    pub non_leaf_set: Vec<usize>,
    /// `Var(E~_nl)`, aligned with the columns of `a_nl`.
    pub nl_noise_variances: Vec<f64>,
}

pub fn build_canonical(model: &CammeModel) -> Result<CanonicalRep> {
    let n = model.n();
    let a = model.sem.mixing_matrix()?;
    let leaf_set = model.dag().leaf_nodes();
    let non_leaf_set: Vec<usize> = (0..n).filter(|i| !leaf_set.contains(i)).collect();
    let noise_var = model.noise_variances();

    let a_nl = DMatrix::from_fn(n, non_leaf_set.len(), |i, k| a[(i, non_leaf_set[k])]);
    let a_l = DMatrix::from_fn(n, leaf_set.len(), |i, k| a[(i, leaf_set[k])]);
    let estar_variances = (0..n)
        .map(|i| {
            if leaf_set.contains(&i) {
                model.me_variances[i] + noise_var[i]
            } else {
                model.me_variances[i]
            }
        })
        .collect();
    let nl_noise_variances = non_leaf_set.iter().map(|&i| noise_var[i]).collect();
    Ok(CanonicalRep { a_nl, a_l, estar_variances, leaf_set, non_leaf_set, nl_noise_variances })
}

impl CanonicalRep {
    pub fn n(&self) -> usize {
        self.a_nl.nrows()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.leaf_set.contains(&i)
    }

    /// `A_nl diag(sd)`: rows are coefficient vectors over standardized sources.
    pub fn standardized_a_nl(&self) -> DMatrix<f64> {
        let mut m = self.a_nl.clone();
        for (k, v) in self.nl_noise_variances.iter().enumerate() {
            m.column_mut(k).scale_mut(v.sqrt());
        }
        m
    }

    /// `Cov(X~*) = A_nl diag(Var E~_nl) A_nl^T`, singular with rank `n - l`.
    pub fn xstar_cov(&self) -> DMatrix<f64> {
        linalg::scaled_gram(&self.a_nl, &self.nl_noise_variances)
    }

    /// `Cov(X) = Cov(X~*) + diag(Var E*)`.
    pub fn observed_cov(&self) -> DMatrix<f64> {
        let mut c = self.xstar_cov();
        for (i, v) in self.estar_variances.iter().enumerate() {
            c[(i, i)] += v;
        }
        c
    }

    /// Whether `node` of `X~*` is a linear function of the variables in `set`,
    /// i.e. its row of `A_nl` lies in the span of the rows indexed by `set`.
    pub fn determines(&self, set: &[usize], node: usize) -> bool {
        if set.contains(&node) {
            return true;
        }
        let rows = self.standardized_a_nl();
        let basis: Vec<DVector<f64>> = set.iter().map(|&s| rows.row(s).transpose()).collect();
        let target = rows.row(node).transpose();
        let scale = target.norm();
        if scale == 0.0 {
            return true;
        }
        let (_, resid) = linalg::fit_rows(&basis, &target);
        resid.norm() <= 1e-9 * scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{default_labels, NoiseSpec, WeightedDag};
    use approx::assert_relative_eq;

    fn example_one(a: f64, b: f64) -> CammeModel {
        let sem = WeightedDag::from_edges(default_labels(3), &[(0, 1, a), (2, 1, b)]).unwrap();
        let noise = vec![NoiseSpec::Uniform { variance: 1.0 }; 3];
        CammeModel::new(sem, noise, vec![0.5, 0.7, 0.9]).unwrap()
    }

    #[test]
    fn example_set_one_blocks() {
        let (a, b) = (0.8, -0.6);
        let cr = build_canonical(&example_one(a, b)).unwrap();
        assert_eq!(cr.leaf_set, vec![1]);
        assert_eq!(cr.non_leaf_set, vec![0, 2]);
        let a_nl = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, a, b, 0.0, 1.0]);
        assert_eq!(cr.a_nl, a_nl);
        assert_eq!(cr.a_l, DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]));
        assert_eq!(cr.estar_variances, vec![0.5, 1.7, 0.9]);
    }

    #[test]
    fn single_node_is_a_leaf() {
        let sem = WeightedDag::from_edges(default_labels(1), &[]).unwrap();
        let m = CammeModel::new(sem, vec![NoiseSpec::Gaussian { variance: 2.0 }], vec![0.25]).unwrap();
        let cr = build_canonical(&m).unwrap();
        assert_eq!(cr.a_nl.ncols(), 0);
        assert_eq!(cr.leaf_set, vec![0]);
        assert_eq!(cr.estar_variances, vec![2.25]);
    }

    #[test]
    fn chain_canonical_by_hand() {
        let b = 1.7;
        let sem = WeightedDag::from_edges(default_labels(2), &[(0, 1, b)]).unwrap();
        let noise = vec![NoiseSpec::Gaussian { variance: 1.5 }, NoiseSpec::Gaussian { variance: 0.4 }];
        let m = CammeModel::new(sem, noise, vec![0.3, 0.2]).unwrap();
        let cr = build_canonical(&m).unwrap();
        assert_eq!(cr.a_nl, DMatrix::from_column_slice(2, 1, &[1.0, b]));
        assert_eq!(cr.leaf_set, vec![1]);
        assert_relative_eq!(cr.estar_variances[0], 0.3);
        assert_relative_eq!(cr.estar_variances[1], 0.6);
    }

    #[test]
    fn leaves_are_determined_by_their_parents() {
        let cr = build_canonical(&example_one(0.8, -0.6)).unwrap();
        assert!(cr.determines(&[0, 2], 1));
        assert!(!cr.determines(&[0], 1));
        assert!(!cr.determines(&[1], 0));
        // A leaf with a single parent pins that parent down.
        let sem = WeightedDag::from_edges(default_labels(2), &[(0, 1, 2.0)]).unwrap();
        let m = CammeModel::new(sem, vec![NoiseSpec::Gaussian { variance: 1.0 }; 2], vec![1.0; 2]).unwrap();
        assert!(build_canonical(&m).unwrap().determines(&[1], 0));
    }
}
