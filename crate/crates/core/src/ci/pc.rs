use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fisher_z_test, is_deterministic, partial_corr};
use crate::error::{Error, Result};
use crate::graph::{d_separated, meek_closure, CanonicalRep, Cpdag, Dag};

/// Partial correlations at or below this count as zero on population input.
pub const POPULATION_CI_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub enum CiSource {
    /// `n_samples = None` marks a population covariance.
    Covariance { cov: DMatrix<f64>, n_samples: Option<usize> },
    /// d-separation in `dag`; determinism read off the canonical representation when given.
    Graph { dag: Dag, canonical: Option<Box<CanonicalRep>> },
}

#[derive(Debug, Clone)]
pub struct CiOracle {
    pub source: CiSource,
    pub alpha: f64,
    pub det_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiDecision {
    Independent,
    Dependent,
    /// The conditioning set determines an endpoint; the test is not run.
    Deterministic,
}

impl CiOracle {
    pub fn population(cov: DMatrix<f64>) -> Self {
        CiOracle {
            source: CiSource::Covariance { cov, n_samples: None },
            alpha: 0.01,
            det_tol: super::POPULATION_DETERMINISM_TOL,
        }
    }

    pub fn sample(cov: DMatrix<f64>, n_samples: usize, alpha: f64) -> Self {
        CiOracle {
            source: CiSource::Covariance { cov, n_samples: Some(n_samples) },
            alpha,
            det_tol: super::sample_determinism_tol(n_samples),
        }
    }

    pub fn graph(dag: Dag, canonical: Option<CanonicalRep>) -> Self {
        CiOracle { source: CiSource::Graph { dag, canonical: canonical.map(Box::new) }, alpha: 0.01, det_tol: 0.0 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let m = match &self.source {
            CiSource::Covariance { cov, .. } => {
                if !cov.is_square() || crate::linalg::max_abs_diff(cov, &cov.transpose()) > 1e-9 * cov.amax().max(1.0) {
                    return Err(Error::Config("covariance must be square and symmetric".into()));
                }
                cov.nrows()
            }
            CiSource::Graph { dag, .. } => dag.n(),
        };
        if m != n {
            return Err(Error::Config(format!("oracle covers {m} variables, expected {n}")));
        }
        Ok(())
    }

    /// Whether `s` determines `target`.
    pub fn determines(&self, target: usize, s: &[usize]) -> bool {
        match &self.source {
            CiSource::Covariance { cov, .. } => !s.is_empty() && is_deterministic(cov, target, s, self.det_tol),
            CiSource::Graph { canonical, .. } => canonical.as_ref().is_some_and(|c| c.determines(s, target)),
        }
    }

    /// Test `i _||_ j | s`. With `skip_deterministic`, configurations where `s`
    /// determines an endpoint come back as [`CiDecision::Deterministic`].
    pub fn test(&self, i: usize, j: usize, s: &[usize], skip_deterministic: bool) -> CiDecision {
        if skip_deterministic && (self.determines(i, s) || self.determines(j, s)) {
            return CiDecision::Deterministic;
        }
        let independent = match &self.source {
            CiSource::Graph { dag, .. } => d_separated(dag, i, j, s),
            CiSource::Covariance { cov, n_samples } => match partial_corr(cov, i, j, s) {
                None => true,
                Some(r) => match n_samples {
                    None => r.abs() <= POPULATION_CI_TOL,
                    Some(n) => fisher_z_test(r, *n, s.len(), self.alpha),
                },
            },
        };
        if independent {
            CiDecision::Independent
        } else {
            CiDecision::Dependent
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcOutput {
    pub cpdag: Cpdag,
    /// Separating set for each removed pair `(min, max)`.
    pub sepsets: BTreeMap<(usize, usize), Vec<usize>>,
    pub tests_run: usize,
    pub tests_skipped: usize,
}

/// Plain PC-stable.
pub fn pc(oracle: &CiOracle, n: usize) -> Result<PcOutput> {
    search(oracle, n, false)
}

/// PC-stable that ignores any test whose conditioning set determines an endpoint.
///
/// Separating sets are searched among all other variables, not only current
/// neighbours: with deterministic relations the neighbour sets can be exactly
/// the ones that get skipped.
pub fn dpc(oracle: &CiOracle, n: usize) -> Result<PcOutput> {
    search(oracle, n, true)
}

fn search(oracle: &CiOracle, n: usize, skip_deterministic: bool) -> Result<PcOutput> {
    oracle.validate(n)?;
    let mut adj = vec![vec![true; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = false;
    }
    let mut sepsets = BTreeMap::new();
    let (mut tests_run, mut tests_skipped) = (0, 0);

    let mut depth = 0;
    loop {
        let snapshot = adj.clone();
        let neighbors = |v: usize| -> Vec<usize> { (0..n).filter(|&u| snapshot[v][u]).collect() };
        let exhausted = if skip_deterministic {
            depth + 2 > n || (0..n).all(|v| neighbors(v).is_empty())
        } else {
            (0..n).all(|v| neighbors(v).len() <= depth)
        };
        if exhausted {
            break;
        }
        let mut removals = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if !snapshot[i][j] {
                    continue;
                }
                let mut found = None;
                let sides: &[(usize, usize)] = if skip_deterministic { &[(i, j)] } else { &[(i, j), (j, i)] };
                'sides: for &(x, y) in sides {
                    let cands: Vec<usize> = if skip_deterministic {
                        (0..n).filter(|&u| u != x && u != y).collect()
                    } else {
                        neighbors(x).into_iter().filter(|&u| u != y).collect()
                    };
                    if cands.len() < depth {
                        continue;
                    }
                    for s in combinations_of(&cands, depth) {
                        match oracle.test(i, j, &s, skip_deterministic) {
                            CiDecision::Deterministic => tests_skipped += 1,
                            CiDecision::Independent => {
                                tests_run += 1;
                                found = Some(s);
                                break 'sides;
                            }
                            CiDecision::Dependent => tests_run += 1,
                        }
                    }
                }
                if let Some(s) = found {
                    removals.push((i, j, s));
                }
            }
        }
        for (i, j, s) in removals {
            adj[i][j] = false;
            adj[j][i] = false;
            sepsets.insert((i, j), s);
        }
        depth += 1;
    }

    let mut cpdag = Cpdag::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if adj[i][j] {
                cpdag.add_undirected(i, j);
            }
        }
    }
    orient_colliders(&mut cpdag, &adj, &sepsets);
    meek_closure(&mut cpdag);
    Ok(PcOutput { cpdag, sepsets, tests_run, tests_skipped })
}

/// `a -> c <- b` for each unshielded triple whose separating set omits `c`.
/// An edge already oriented the other way keeps its first orientation.
fn orient_colliders(g: &mut Cpdag, adj: &[Vec<bool>], sepsets: &BTreeMap<(usize, usize), Vec<usize>>) {
    let n = adj.len();
    for c in 0..n {
        for a in 0..n {
            for b in a + 1..n {
                if !adj[a][c] || !adj[b][c] || adj[a][b] {
                    continue;
                }
                let sep = sepsets.get(&(a, b)).map(Vec::as_slice).unwrap_or(&[]);
                if sep.contains(&c) {
                    continue;
                }
                for x in [a, b] {
                    if !g.is_directed(c, x) {
                        g.orient(x, c);
                    }
                }
            }
        }
    }
}

/// Size-`k` subsets of `items` in lexicographic order.
pub fn combinations_of(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == items.len() - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        idx[pos - 1] += 1;
        for q in pos..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::cpdag_of;

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(combinations_of(&[1, 3, 5], 2), vec![vec![1, 3], vec![1, 5], vec![3, 5]]);
        assert_eq!(combinations_of(&[1, 2], 0), vec![Vec::<usize>::new()]);
        assert!(combinations_of(&[1], 2).is_empty());
    }

    #[test]
    fn graph_oracle_recovers_cpdag() {
        let dag = Dag::with_default_labels(5, &[(0, 2), (1, 2), (2, 3), (3, 4), (1, 4)]).unwrap();
        let out = pc(&CiOracle::graph(dag.clone(), None), 5).unwrap();
        assert_eq!(out.cpdag, cpdag_of(&dag));
    }

    #[test]
    fn rejects_bad_alpha() {
        let mut o = CiOracle::population(DMatrix::identity(2, 2));
        o.alpha = 1.5;
        assert!(matches!(pc(&o, 2), Err(Error::Config(_))));
    }
}
