//! Sampling from measurement-error models, random model generation and the
//! closed-form correlation-distortion curves.

mod dataset;
mod random;

pub use dataset::{Dataset, DatasetMeta};
pub use random::{random_camme, RandomDagConfig};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fixtures::{self, NoiseFamily};
use crate::graph::{io::GraphJson, CammeModel, NoiseSpec};

/// Hex SHA-256 of the model's graph JSON.
pub fn model_hash(model: &CammeModel) -> String {
    let json = serde_json::to_string(&GraphJson::from_model(model)).expect("model serializes");
    content_hash(json.as_bytes())
}

/// Hex SHA-256 of raw bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl NoiseSpec {
    /// One zero-mean draw with the declared variance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Gaussian { variance } => variance.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal),
            NoiseSpec::Uniform { variance } => {
                let h = (3.0 * variance).sqrt();
                rng.random_range(-h..h)
            }
            NoiseSpec::Laplace { variance } => {
                let b = (variance / 2.0).sqrt();
                let u: f64 = rng.random_range(-0.5..0.5);
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseSpec::Gmm { variance, weights, sd_ratio } => {
                let base = weights[0] + weights[1] * sd_ratio * sd_ratio;
                let scale = (variance / base).sqrt();
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                let p = weights[0] / (weights[0] + weights[1]);
                if rng.random::<f64>() < p {
                    scale * z
                } else {
                    scale * sd_ratio * z
                }
            }
        }
    }
}

/// Draw `n_samples` rows of `X`, keeping `X~` alongside.
pub fn sample_camme(model: &CammeModel, n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let n = model.n();
    let order = model.dag().topological_order()?;
    let b = model.sem.b();
    let parents: Vec<Vec<(usize, f64)>> =
        (0..n).map(|i| model.dag().parents(i).iter().map(|&p| (p, b[(i, p)])).collect()).collect();
    let me: Vec<Option<Normal<f64>>> = model
        .me_variances
        .iter()
        .map(|&v| (v > 0.0).then(|| Normal::new(0.0, v.sqrt()).expect("finite variance")))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latent = DMatrix::zeros(n_samples, n);
    let mut values = DMatrix::zeros(n_samples, n);
    let mut x = vec![0.0; n];
    for row in 0..n_samples {
        for &i in &order {
            let mut v = model.noise[i].sample(&mut rng);
            for &(p, w) in &parents[i] {
                v += w * x[p];
            }
            x[i] = v;
        }
        for i in 0..n {
            latent[(row, i)] = x[i];
            values[(row, i)] = x[i] + me[i].as_ref().map_or(0.0, |d| d.sample(&mut rng));
        }
    }
    Ok(Dataset {
        values,
        labels: model.labels().to_vec(),
        meta: DatasetMeta { seed, model_hash: model_hash(model), n_samples },
        latent: Some(latent),
    })
}

fn check_curve_args(rho_tilde: f64, gamma: f64) -> Result<()> {
    if !(rho_tilde.abs() < 1.0) || !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("need |rho| < 1 and finite gamma >= 0, got {rho_tilde}, {gamma}")));
    }
    Ok(())
}

/// Observed correlation of `X1` and `X2` when only `X2` carries measurement error.
pub fn analytic_rho12(rho_tilde: f64, gamma: f64) -> Result<f64> {
    check_curve_args(rho_tilde, gamma)?;
    Ok(rho_tilde / (1.0 + gamma * gamma).sqrt())
}

/// Partial correlation of `X1` and `X3` given the contaminated `X2`.
pub fn analytic_rho13_2(rho_tilde: f64, gamma: f64) -> Result<f64> {
    check_curve_args(rho_tilde, gamma)?;
    let g2 = gamma * gamma;
    let r2 = rho_tilde * rho_tilde;
    Ok(g2 * r2 / (1.0 + g2 - r2))
}

/// Header plus numeric rows, ready for CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DemoTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemoKind {
    /// `(gamma, rho12, rho13_2)` on a grid of `steps + 1` points in `[0, gamma_max]`.
    Fig2 { rho_tilde: f64, gamma_max: f64, steps: usize },
    /// `(X2, X1, residual of X1 on X2)` from the chain with uniform noise.
    Fig3 { rho_tilde: f64, gamma: f64, n_samples: usize, seed: u64 },
}

impl DemoKind {
    pub fn fig2_default() -> Self {
        DemoKind::Fig2 { rho_tilde: 0.5, gamma_max: 5.0, steps: 100 }
    }

    pub fn fig3_default() -> Self {
        DemoKind::Fig3 { rho_tilde: 0.4, gamma: 1.4, n_samples: 1000, seed: 0 }
    }
}

pub fn emit_demo_data(kind: DemoKind) -> Result<DemoTable> {
    match kind {
        DemoKind::Fig2 { rho_tilde, gamma_max, steps } => {
            if steps == 0 {
                return Err(Error::Config("grid needs at least one step".into()));
            }
            let rows = (0..=steps)
                .map(|k| {
                    let g = gamma_max * k as f64 / steps as f64;
                    Ok(vec![g, analytic_rho12(rho_tilde, g)?, analytic_rho13_2(rho_tilde, g)?])
                })
                .collect::<Result<_>>()?;
            Ok(DemoTable { header: vec!["gamma".into(), "rho12".into(), "rho13_2".into()], rows })
        }
        DemoKind::Fig3 { rho_tilde, gamma, n_samples, seed } => {
            let model = fixtures::fig1(rho_tilde, gamma, NoiseFamily::Uniform)?;
            let data = sample_camme(&model, n_samples, seed)?;
            let x1: Vec<f64> = data.values.column(0).iter().copied().collect();
            let x2: Vec<f64> = data.values.column(1).iter().copied().collect();
            let resid = regression_residual(&x1, &x2);
            let rows = (0..n_samples).map(|i| vec![x2[i], x1[i], resid[i]]).collect();
            Ok(DemoTable { header: vec!["X2".into(), "X1".into(), "residual".into()], rows })
        }
    }
}

/// Residual of the least-squares regression of `y` on `x` (with intercept).
pub fn regression_residual(y: &[f64], x: &[f64]) -> Vec<f64> {
    let (mx, my) = (crate::stats::mean(x), crate::stats::mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let beta = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter().zip(y).map(|(a, b)| (b - my) - beta * (a - mx)).collect()
}

/// `Uniform` helper used by the random generator.
pub(crate) fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new_inclusive(lo, hi).expect("valid range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn curve_examples() {
        assert_eq!(analytic_rho12(0.5, 0.0).unwrap(), 0.5);
        assert_eq!(analytic_rho13_2(0.5, 0.0).unwrap(), 0.0);
        assert_relative_eq!(analytic_rho12(0.5, 1.0).unwrap(), 0.5 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(analytic_rho13_2(0.5, 1.0).unwrap(), 0.25 / 1.75, epsilon = 1e-15);
        assert!((analytic_rho13_2(0.5, 1e4).unwrap() - 0.25).abs() < 1e-6);
        assert!(analytic_rho12(1.0, 1.0).is_err());
    }

    #[test]
    fn no_measurement_error_means_x_equals_latent() {
        let sem = crate::graph::WeightedDag::from_edges(crate::graph::default_labels(2), &[(0, 1, 0.5)]).unwrap();
        let m = CammeModel::new(sem, vec![NoiseSpec::Uniform { variance: 1.0 }; 2], vec![0.0; 2]).unwrap();
        let d = sample_camme(&m, 100, 3).unwrap();
        assert_eq!(&d.values, d.latent.as_ref().unwrap());
    }

    #[test]
    fn same_seed_same_data() {
        let m = fixtures::gb(NoiseFamily::Laplace);
        assert_eq!(sample_camme(&m, 50, 9).unwrap().values, sample_camme(&m, 50, 9).unwrap().values);
        assert_ne!(sample_camme(&m, 50, 9).unwrap().values, sample_camme(&m, 50, 10).unwrap().values);
    }

    #[test]
    fn fig2_first_row() {
        let t = emit_demo_data(DemoKind::Fig2 { rho_tilde: 0.3, gamma_max: 2.0, steps: 4 }).unwrap();
        assert_eq!(t.rows[0], vec![0.0, 0.3, 0.0]);
        assert_eq!(t.rows.len(), 5);
        assert!(t.to_csv().unwrap().starts_with("gamma,rho12,rho13_2\n0,0.3,0\n"));
    }
}
