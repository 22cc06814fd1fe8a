use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::uniform;
use crate::error::{Error, Result};
use crate::fixtures::NoiseFamily;
use crate::graph::{default_labels, CammeModel, WeightedDag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomDagConfig {
    pub n: usize,
    /// Number of nodes without children.
    pub leaves: usize,
    /// Edge probability among admissible pairs.
    pub density: f64,
    /// `|w|` is drawn from `[coef_lo, coef_hi]` with a random sign.
    pub coef_lo: f64,
    pub coef_hi: f64,
    pub seed: u64,
    pub family: NoiseFamily,
    pub noise_var: (f64, f64),
    /// Equal bounds give equal measurement-error variances.
    pub me_var: (f64, f64),
    /// Each leaf gets at least this many parents (capped by the non-leaf count).
    pub min_leaf_parents: usize,
}

impl RandomDagConfig {
    pub fn new(n: usize, leaves: usize, seed: u64) -> Self {
        RandomDagConfig {
            n,
            leaves,
            density: 0.5,
            coef_lo: 0.3,
            coef_hi: 1.5,
            seed,
            family: NoiseFamily::Gaussian,
            noise_var: (0.5, 1.5),
            me_var: (0.3, 0.3),
            min_leaf_parents: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("need at least one node".into()));
        }
        if self.leaves == 0 || self.leaves > self.n || (self.leaves == self.n && self.n > 1) {
            return Err(Error::Config(format!(
                "leaf count {} is infeasible for {} nodes (a DAG has at least one leaf, and every non-leaf needs a child)",
                self.leaves, self.n
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density must lie in (0, 1], got {}", self.density)));
        }
        if !(self.coef_lo > 0.0 && self.coef_lo <= self.coef_hi) {
            return Err(Error::Config("need 0 < coef_lo <= coef_hi".into()));
        }
        if !(self.noise_var.0 > 0.0 && self.noise_var.0 <= self.noise_var.1) {
            return Err(Error::Config("need 0 < noise variance bounds, lo <= hi".into()));
        }
        if !(self.me_var.0 >= 0.0 && self.me_var.0 <= self.me_var.1) {
            return Err(Error::Config("need 0 <= measurement-error variance bounds, lo <= hi".into()));
        }
        Ok(())
    }
}

/// Random model with exactly `leaves` childless nodes.
///
/// Non-leaves come first in a hidden causal order and every one of them gets
/// a child; leaves receive edges from non-leaves only. Node indices are then
/// shuffled.
pub fn random_camme(cfg: &RandomDagConfig) -> Result<CammeModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let m = n - cfg.leaves;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if rng.random::<f64>() < cfg.density {
                edges.push((i, j));
            }
        }
    }
    if m > 0 {
        for leaf in m..n {
            let mut ps: Vec<usize> = (0..m).filter(|_| rng.random::<f64>() < cfg.density).collect();
            let want = cfg.min_leaf_parents.clamp(1, m);
            while ps.len() < want {
                let p = rng.random_range(0..m);
                if !ps.contains(&p) {
                    ps.push(p);
                }
            }
            ps.sort_unstable();
            edges.extend(ps.into_iter().map(|p| (p, leaf)));
        }
        for i in 0..m {
            if !edges.iter().any(|&(f, _)| f == i) {
                let to = rng.random_range(i + 1..n);
                edges.push((i, to));
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let coef = uniform(cfg.coef_lo, cfg.coef_hi);
    let mut weighted: Vec<(usize, usize, f64)> = edges
        .into_iter()
        .map(|(f, t)| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (perm[f], perm[t], sign * coef.sample(&mut rng))
        })
        .collect();
    weighted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let sem = WeightedDag::from_edges(default_labels(n), &weighted)?;
    let nv = uniform(cfg.noise_var.0, cfg.noise_var.1);
    let noise = (0..n).map(|_| cfg.family.spec(nv.sample(&mut rng))).collect();
    let me = if cfg.me_var.0 == cfg.me_var.1 {
        vec![cfg.me_var.0; n]
    } else {
        let d = uniform(cfg.me_var.0, cfg.me_var.1);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    };
    CammeModel::new(sem, noise, me)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_count_is_exact_and_reproducible() {
        for seed in 0..20 {
            let cfg = RandomDagConfig::new(8, 4, seed);
            let m = random_camme(&cfg).unwrap();
            assert_eq!(m.dag().leaf_nodes().len(), 4);
            assert_eq!(m, random_camme(&cfg).unwrap());
        }
    }

    #[test]
    fn dense_single_sink() {
        let mut cfg = RandomDagConfig::new(5, 1, 1);
        cfg.density = 1.0;
        let m = random_camme(&cfg).unwrap();
        assert_eq!(m.dag().edge_count(), 10);
        assert_eq!(m.dag().leaf_nodes().len(), 1);
    }

    #[test]
    fn infeasible_leaf_counts() {
        assert!(matches!(random_camme(&RandomDagConfig::new(4, 0, 0)), Err(Error::Config(_))));
        assert!(matches!(random_camme(&RandomDagConfig::new(4, 4, 0)), Err(Error::Config(_))));
        assert!(random_camme(&RandomDagConfig::new(1, 1, 0)).is_ok());
    }
}
