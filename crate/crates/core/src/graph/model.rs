use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dag::Dag;
use crate::error::{Error, Result};

/// Zero-mean noise distribution with a declared variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum NoiseSpec {
    Gaussian { variance: f64 },
    Uniform { variance: f64 },
    Laplace { variance: f64 },
    /// Two zero-mean Gaussian components with standard deviations in ratio
    /// `1 : sd_ratio`, rescaled to the declared variance.
    Gmm {
        variance: f64,
        #[serde(default = "default_gmm_weights")]
        weights: [f64; 2],
        #[serde(default = "default_gmm_ratio")]
        sd_ratio: f64,
    },
}

fn default_gmm_weights() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_gmm_ratio() -> f64 {
    3.0
}

impl NoiseSpec {
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { variance }
            | NoiseSpec::Uniform { variance }
            | NoiseSpec::Laplace { variance }
            | NoiseSpec::Gmm { variance, .. } => variance,
        }
    }

    pub fn gmm(variance: f64) -> Self {
        NoiseSpec::Gmm {
            variance,
            weights: default_gmm_weights(),
            sd_ratio: default_gmm_ratio(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, NoiseSpec::Gaussian { .. })
    }

    /// Excess kurtosis of the distribution.
    pub fn excess_kurtosis(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { .. } => 0.0,
            NoiseSpec::Uniform { .. } => -1.2,
            NoiseSpec::Laplace { .. } => 3.0,
            NoiseSpec::Gmm { weights, sd_ratio, .. } => {
                let (w1, w2) = (weights[0], weights[1]);
                let r2 = sd_ratio * sd_ratio;
                let m2 = w1 + w2 * r2;
                let m4 = 3.0 * (w1 + w2 * r2 * r2);
                m4 / (m2 * m2) - 3.0
            }
        }
    }

    pub fn with_variance(self, v: f64) -> Self {
        match self {
            NoiseSpec::Gaussian { .. } => NoiseSpec::Gaussian { variance: v },
            NoiseSpec::Uniform { .. } => NoiseSpec::Uniform { variance: v },
            NoiseSpec::Laplace { .. } => NoiseSpec::Laplace { variance: v },
            NoiseSpec::Gmm { weights, sd_ratio, .. } => NoiseSpec::Gmm { variance: v, weights, sd_ratio },
        }
    }
}

/// Linear structural equation model `X = B X + E` on a DAG.
///
/// `b[(i, j)]` is the direct effect of node `j` on node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDag {
    dag: Dag,
    b: DMatrix<f64>,
}

impl WeightedDag {
    pub fn new(dag: Dag, b: DMatrix<f64>) -> Result<Self> {
        let n = dag.n();
        if b.shape() != (n, n) {
            return Err(Error::Structural(format!("coefficient matrix must be {n}x{n}")));
        }
        for i in 0..n {
            for j in 0..n {
                let w = b[(i, j)];
                if !w.is_finite() {
                    return Err(Error::Structural(format!("non-finite coefficient at ({i}, {j})")));
                }
                let edge = dag.has_edge(j, i);
                if i == j && w != 0.0 {
                    return Err(Error::Structural(format!("non-zero diagonal coefficient on node {i}")));
                }
                if edge != (w != 0.0) {
                    return Err(Error::Structural(format!(
                        "coefficient pattern disagrees with edge {j} -> {i}"
                    )));
                }
            }
        }
        Ok(WeightedDag { dag, b })
    }

    /// Build from `(from, to, weight)` triples.
    pub fn from_edges(labels: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = labels.len();
        let pairs: Vec<(usize, usize)> = edges.iter().map(|&(f, t, _)| (f, t)).collect();
        let dag = Dag::new(labels, &pairs)?;
        let mut b = DMatrix::zeros(n, n);
        for &(f, t, w) in edges {
            if w == 0.0 {
                return Err(Error::Structural(format!("zero weight on edge {f} -> {t}")));
            }
            b[(t, f)] = w;
        }
        Self::new(dag, b)
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.dag.n()
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.b[(to, from)]
    }

    /// Weighted edges `(from, to, weight)` in lexicographic order.
    pub fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        self.dag.edges().into_iter().map(|(f, t)| (f, t, self.b[(t, f)])).collect()
    }

    /// `A = (I - B)^{-1}`, the map from noise terms to variables.
    pub fn mixing_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        let i_minus_b = DMatrix::<f64>::identity(n, n) - &self.b;
        i_minus_b
            .try_inverse()
            .ok_or_else(|| Error::Structural("I - B is singular (cyclic model)".into()))
    }
}

/// Linear SEM whose variables are observed with additive measurement error.
#[derive(Debug, Clone, PartialEq)]
pub struct CammeModel {
    pub sem: WeightedDag,
    pub noise: Vec<NoiseSpec>,
    pub me_variances: Vec<f64>,
}

impl CammeModel {
    pub fn new(sem: WeightedDag, noise: Vec<NoiseSpec>, me_variances: Vec<f64>) -> Result<Self> {
        let n = sem.n();
        if noise.len() != n || me_variances.len() != n {
            return Err(Error::Structural(format!(
                "expected {n} noise specs and {n} measurement-error variances"
            )));
        }
        if let Some(i) = noise.iter().position(|s| !(s.variance() > 0.0 && s.variance().is_finite())) {
            return Err(Error::Structural(format!("noise variance of node {i} must be positive")));
        }
        if let Some(i) = me_variances.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Structural(format!(
                "measurement-error variance of node {i} must be non-negative"
            )));
        }
        Ok(CammeModel { sem, noise, me_variances })
    }

    pub fn n(&self) -> usize {
        self.sem.n()
    }

    pub fn dag(&self) -> &Dag {
        self.sem.dag()
    }

    pub fn labels(&self) -> &[String] {
        self.sem.dag().labels()
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        self.noise.iter().map(NoiseSpec::variance).collect()
    }

    /// Zero measurement error somewhere: allowed for illustration models but
    /// outside the standing assumption that every variable is contaminated.
    pub fn has_error_free_variables(&self) -> bool {
        self.me_variances.contains(&0.0)
    }

    /// `Cov(X~) = A diag(Var E~) A^T`.
    pub fn latent_cov(&self) -> Result<DMatrix<f64>> {
        let a = self.sem.mixing_matrix()?;
        Ok(crate::linalg::scaled_gram(&a, &self.noise_variances()))
    }

    /// `Cov(X) = Cov(X~) + diag(Var E)`.
    pub fn observed_cov(&self) -> Result<DMatrix<f64>> {
        let mut c = self.latent_cov()?;
        for (i, v) in self.me_variances.iter().enumerate() {
            c[(i, i)] += v;
        }
        Ok(c)
    }
}
