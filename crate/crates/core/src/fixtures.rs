//! Named models: the illustration graphs G_A to G_E, the chain of the
//! correlation-distortion example, the parameter-coupling example, Example
//! Set 1 and a two-node chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{default_labels, CammeModel, NoiseSpec, WeightedDag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Laplace,
    Gmm,
}

impl NoiseFamily {
    pub fn spec(self, variance: f64) -> NoiseSpec {
        match self {
            NoiseFamily::Gaussian => NoiseSpec::Gaussian { variance },
            NoiseFamily::Uniform => NoiseSpec::Uniform { variance },
            NoiseFamily::Laplace => NoiseSpec::Laplace { variance },
            NoiseFamily::Gmm => NoiseSpec::gmm(variance),
        }
    }
}

/// Measurement-error variance shared by the graph fixtures.
pub const FIXTURE_ME_VARIANCE: f64 = 0.3;

const LEAF_NOISE: [f64; 4] = [0.5, 0.8, 1.1, 1.4];

pub const GA_EDGES: &[(usize, usize, f64)] = &[
    (0, 1, 0.9),
    (1, 2, -0.8),
    (2, 3, 1.1),
    (0, 4, 0.7),
    (1, 4, -1.2),
    (1, 5, 0.6),
    (2, 5, 1.3),
    (2, 6, -0.9),
    (3, 6, 0.8),
    (0, 7, 1.0),
    (3, 7, -0.7),
];

pub const GB_EDGES: &[(usize, usize, f64)] = &[(0, 1, 0.8), (0, 2, -1.1), (0, 3, 1.3)];

pub const GC_EDGES: &[(usize, usize, f64)] = &[
    (0, 1, 0.9),
    (0, 2, 0.7),
    (1, 2, -0.8),
    (1, 3, 1.2),
    (3, 4, 0.9),
    (4, 5, -1.1),
    (1, 5, 0.6),
];

/// The extra (dashed) edge of G_D.
pub const GD_EXTRA_EDGE: (usize, usize, f64) = (0, 5, 0.8);

pub const GE_EDGES: &[(usize, usize, f64)] = &[
    (0, 1, 0.9),
    (1, 2, -0.8),
    (2, 5, 1.1),
    (5, 7, 0.7),
    (1, 3, 1.2),
    (2, 3, -0.6),
    (2, 6, 0.9),
    (0, 4, 0.8),
    (2, 4, -1.0),
    (6, 7, -0.9),
    (0, 6, 0.7),
    (1, 5, 0.6),
];

/// Unit noise on non-leaves, distinct noise variances on leaves, equal
/// measurement-error variances.
pub fn graph_model(n: usize, edges: &[(usize, usize, f64)], family: NoiseFamily) -> Result<CammeModel> {
    let sem = WeightedDag::from_edges(default_labels(n), edges)?;
    let leaves = sem.dag().leaf_nodes();
    let noise = (0..n)
        .map(|i| match leaves.iter().position(|&l| l == i) {
            Some(k) => family.spec(LEAF_NOISE[k % LEAF_NOISE.len()]),
            None => family.spec(1.0),
        })
        .collect();
    CammeModel::new(sem, noise, vec![FIXTURE_ME_VARIANCE; n])
}

pub fn ga(family: NoiseFamily) -> CammeModel {
    graph_model(8, GA_EDGES, family).expect("valid fixture")
}

pub fn gb(family: NoiseFamily) -> CammeModel {
    graph_model(4, GB_EDGES, family).expect("valid fixture")
}

pub fn gc(family: NoiseFamily) -> CammeModel {
    graph_model(6, GC_EDGES, family).expect("valid fixture")
}

pub fn gd(family: NoiseFamily) -> CammeModel {
    let mut edges = GC_EDGES.to_vec();
    edges.push(GD_EXTRA_EDGE);
    graph_model(6, &edges, family).expect("valid fixture")
}

pub fn ge(family: NoiseFamily) -> CammeModel {
    graph_model(8, GE_EDGES, family).expect("valid fixture")
}

/// `X1 <- X2 -> X3` with unit latent variances, correlation `rho` on each edge,
/// and measurement error of variance `gamma^2` on `X2` only.
pub fn fig1(rho: f64, gamma: f64, family: NoiseFamily) -> Result<CammeModel> {
    if !(rho.abs() < 1.0) || !(gamma >= 0.0) {
        return Err(Error::Config(format!("need |rho| < 1 and gamma >= 0, got rho={rho}, gamma={gamma}")));
    }
    let e = 1.0 - rho * rho;
    let sem = WeightedDag::from_edges(default_labels(3), &[(1, 0, rho), (1, 2, rho)])?;
    let noise = vec![family.spec(e), family.spec(1.0), family.spec(e)];
    CammeModel::new(sem, noise, vec![0.0, gamma * gamma, 0.0])
}

/// Parameter coupling: `X4` receives twice the effects that enter `X3`.
pub fn fig4(a: f64, b: f64, c: f64, d: f64, family: NoiseFamily) -> Result<CammeModel> {
    let edges = [(0, 1, c), (0, 2, a), (1, 2, b), (1, 3, 2.0 * b), (0, 3, 2.0 * a), (3, 4, d)];
    graph_model(5, &edges, family)
}

/// Collider `X1 -> X2 <- X3` with weights `a`, `b`.
pub fn example1(a: f64, b: f64, noise_var: f64, me_var: f64, family: NoiseFamily) -> Result<CammeModel> {
    let sem = WeightedDag::from_edges(default_labels(3), &[(0, 1, a), (2, 1, b)])?;
    CammeModel::new(sem, vec![family.spec(noise_var); 3], vec![me_var; 3])
}

/// `X1 -> X2` with weight `b`.
pub fn chain2(b: f64, noise_var: f64, me_var: f64, family: NoiseFamily) -> Result<CammeModel> {
    let sem = WeightedDag::from_edges(default_labels(2), &[(0, 1, b)])?;
    CammeModel::new(sem, vec![family.spec(noise_var); 2], vec![me_var; 2])
}

pub const FIXTURE_NAMES: &[&str] = &["ga", "gb", "gc", "gd", "ge", "fig1", "fig4", "example1", "chain2"];

/// Look up a registry name, optionally suffixed with `-nongaussian` for uniform noise.
pub fn fixture(name: &str) -> Result<CammeModel> {
    let (base, family) = match name.strip_suffix("-nongaussian") {
        Some(b) => (b, NoiseFamily::Uniform),
        None => (name, NoiseFamily::Gaussian),
    };
    match base {
        "ga" => Ok(ga(family)),
        "gb" => Ok(gb(family)),
        "gc" => Ok(gc(family)),
        "gd" => Ok(gd(family)),
        "ge" => Ok(ge(family)),
        "fig1" => fig1(0.5, 1.0, family),
        "fig4" => fig4(0.8, 0.6, 0.9, 1.1, family),
        "example1" => example1(1.0, 1.0, 1.0, 1.0, family),
        "chain2" => chain2(0.8, 1.0, 1.0, family),
        _ => Err(Error::Config(format!(
            "unknown fixture '{name}'; known: {} (each with optional -nongaussian)",
            FIXTURE_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_every_name() {
        for name in FIXTURE_NAMES {
            assert!(fixture(name).is_ok());
            let m = fixture(&format!("{name}-nongaussian")).unwrap();
            assert!(m.noise.iter().all(|s| !s.is_gaussian()));
        }
        assert!(matches!(fixture("gz"), Err(Error::Config(_))));
    }

    #[test]
    fn leaf_sets() {
        assert_eq!(ga(NoiseFamily::Gaussian).dag().leaf_nodes(), vec![4, 5, 6, 7]);
        assert_eq!(gb(NoiseFamily::Gaussian).dag().leaf_nodes(), vec![1, 2, 3]);
        assert_eq!(gc(NoiseFamily::Gaussian).dag().leaf_nodes(), vec![2, 5]);
        assert_eq!(gd(NoiseFamily::Gaussian).dag().leaf_nodes(), vec![2, 5]);
        assert_eq!(ge(NoiseFamily::Gaussian).dag().leaf_nodes(), vec![3, 4, 7]);
    }
}
