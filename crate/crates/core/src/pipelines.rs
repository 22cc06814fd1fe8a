//! End-to-end discovery: the two second-order procedures built on factor
//! analysis, and the recursive procedure built on the mixing estimate.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ci::{dpc, pc, sample_determinism_tol, CiOracle, POPULATION_DETERMINISM_TOL};
use crate::error::{Error, Result};
use crate::factor::{fa_fit_with, free_parameters, identifiability_thresholds, select_num_factors, FaConfig, FaFit};
use crate::graph::io::GraphJson;
use crate::graph::{build_canonical, meek_closure, CammeModel, Cpdag};
use crate::linalg;
use crate::oica::{oica_fit, MixingEstimate, OicaConfig};
use crate::recursive::{
    decompose, identify_leaves, identify_leaves_equvar, reconstruct_graph, smallest_reconstruction, RecursiveGroups,
    RgdConfig,
};
use crate::simulate::Dataset;

/// Covariance handed to the second-order pipelines.
#[derive(Debug, Clone)]
pub enum CovInput {
    Sample { cov: DMatrix<f64>, n_samples: usize },
    /// Exact `Cov(X)`; factor analysis still runs.
    Population { cov: DMatrix<f64> },
    /// Exact `Cov(X)` with the true uniquenesses, so `Cov(X~*) = Cov(X) - diag(psi)`.
    Oracle { cov: DMatrix<f64>, psi: Vec<f64> },
}

impl CovInput {
    pub fn from_dataset(data: &Dataset) -> Self {
        CovInput::Sample { cov: data.covariance(), n_samples: data.n_samples() }
    }

    pub fn oracle(model: &CammeModel) -> Result<Self> {
        let cr = build_canonical(model)?;
        Ok(CovInput::Oracle { cov: cr.observed_cov(), psi: cr.estar_variances })
    }

    pub fn population(model: &CammeModel) -> Result<Self> {
        Ok(CovInput::Population { cov: model.observed_cov()? })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        match self {
            CovInput::Sample { cov, .. } | CovInput::Population { cov } | CovInput::Oracle { cov, .. } => cov,
        }
    }

    pub fn n_samples(&self) -> Option<usize> {
        match self {
            CovInput::Sample { n_samples, .. } => Some(*n_samples),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Level of the Fisher-z tests on sample input.
    pub alpha: f64,
    /// Relative gap under which two `E*` variances count as tied.
    pub equvar_tol: f64,
    /// Relative residual for leaf-row reconstruction; `None` picks by input.
    pub recon_tol: Option<f64>,
    pub fa: Option<FaConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { alpha: 0.01, equvar_tol: 0.02, recon_tol: None, fa: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaSummary {
    pub r: usize,
    pub loglik: f64,
    pub bic: f64,
    pub iterations: usize,
    pub psi: Vec<f64>,
    pub at_floor: Vec<usize>,
}

impl From<&FaFit> for FaSummary {
    fn from(f: &FaFit) -> Self {
        FaSummary {
            r: f.r,
            loglik: f.loglik,
            bic: f.bic,
            iterations: f.iterations,
            psi: f.psi.clone(),
            at_floor: f.at_floor.clone(),
        }
    }
}

/// Checks on the result itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultAudit {
    pub leaf_count: usize,
    pub leaf_fraction: f64,
    /// `c(n)`; the leaf fraction must exceed it for generic identifiability.
    pub threshold: f64,
    pub a1_holds: bool,
    /// Smallest and largest estimated `Var(E*)`.
    pub estar_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fa: Option<FaSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<ResultAudit>,
    pub tests_run: usize,
    pub tests_skipped: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub method: String,
    pub cpdag: Cpdag,
    pub leaf_set: Vec<usize>,
    pub estar_variances: Vec<f64>,
    /// Weighted parents of each identified leaf.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub leaf_parents: BTreeMap<usize, Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<RecursiveGroups>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphJson>,
    pub diagnostics: Diagnostics,
}

impl DiscoveryResult {
    /// Leaves listed in `leaf_set` have only incoming edges.
    pub fn check_leaf_invariant(&self) -> bool {
        self.leaf_set.iter().all(|&l| {
            self.cpdag.undirected.iter().all(|&(a, b)| a != l && b != l)
                && self.cpdag.directed.iter().all(|&(a, _)| a != l)
        })
    }
}

fn audit(n: usize, leaves: usize, estar: &[f64]) -> ResultAudit {
    let (_, c) = identifiability_thresholds(n);
    let frac = leaves as f64 / n as f64;
    let lo = estar.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = estar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ResultAudit { leaf_count: leaves, leaf_fraction: frac, threshold: c, a1_holds: frac > c, estar_range: (lo, hi) }
}

/// Shared-part loadings and uniquenesses for `r = n - l`.
struct SharedPart {
    l: DMatrix<f64>,
    psi: Vec<f64>,
    fa: Option<FaSummary>,
    warnings: Vec<String>,
}

fn shared_part(input: &CovInput, leaves: usize, cfg: &PipelineConfig) -> Result<SharedPart> {
    let cov = input.cov();
    let n = cov.nrows();
    if !cov.is_square() || n < 2 {
        return Err(Error::Config("covariance must be square with at least two variables".into()));
    }
    if leaves == 0 || leaves >= n {
        return Err(Error::Config(format!("leaf count must lie in [1, {}], got {leaves}", n - 1)));
    }
    let r = n - leaves;
    let mut warnings = Vec::new();
    let (phi, _) = identifiability_thresholds(n);
    if r as f64 >= phi {
        warnings.push(format!(
            "{r} factors on {n} variables is not below the identifiability bound {phi:.3}; the factor solution may not be unique"
        ));
    }
    match input {
        CovInput::Oracle { cov, psi } => {
            if psi.len() != n {
                return Err(Error::Config(format!("expected {n} uniquenesses, got {}", psi.len())));
            }
            let mut xstar = cov.clone();
            for (i, p) in psi.iter().enumerate() {
                xstar[(i, i)] -= p;
            }
            Ok(SharedPart { l: top_factor(&xstar, r), psi: psi.clone(), fa: None, warnings })
        }
        CovInput::Population { cov } | CovInput::Sample { cov, .. } => {
            let fa_cfg = cfg.fa.unwrap_or(if input.n_samples().is_none() { FaConfig::population() } else { FaConfig::default() });
            // The sample size only enters the BIC.
            let n_eff = input.n_samples().unwrap_or(1_000_000);
            let fit = match fa_fit_with(cov, n_eff, r, &fa_cfg) {
                Ok(f) => f,
                Err(Error::NotConverged { best: Some(b), iterations, .. }) => {
                    warnings.push(format!("factor analysis stopped after {iterations} iterations; using the last iterate"));
                    serde_json::from_value(*b)?
                }
                Err(e) => return Err(e),
            };
            if !fit.at_floor.is_empty() {
                warnings.push(format!("uniquenesses at the floor for nodes {:?}", fit.at_floor));
            }
            Ok(SharedPart { l: fit.l.clone(), psi: fit.psi.clone(), fa: Some(FaSummary::from(&fit)), warnings })
        }
    }
}

/// `U sqrt(Lambda)` for the `r` largest eigenpairs.
fn top_factor(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(m.nrows(), r, |i, k| {
        eig.eigenvectors[(i, order[k])] * eig.eigenvalues[order[k]].max(0.0).sqrt()
    })
}

fn recon_tol(input: &CovInput, cfg: &PipelineConfig) -> f64 {
    cfg.recon_tol.unwrap_or(match input.n_samples() {
        None => 1e-6,
        Some(n) => (10.0 / (n as f64).sqrt()).clamp(1e-6, 0.25),
    })
}

/// Indices of the `n - l` smallest uniquenesses; a tie across the boundary is
/// an ambiguity.
pub fn smallest_variances(psi: &[f64], non_leaves: usize, tol: f64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..psi.len()).collect();
    order.sort_by(|&a, &b| psi[a].total_cmp(&psi[b]).then(a.cmp(&b)));
    if non_leaves < psi.len() {
        let last_in = psi[order[non_leaves - 1]];
        let first_out = psi[order[non_leaves]];
        if first_out <= last_in * (1.0 + tol) {
            let tied: Vec<usize> =
                order.iter().copied().filter(|&i| (psi[i] - last_in).abs() <= tol * last_in.abs()).collect();
            return Err(Error::Ambiguity {
                message: format!("measurement-error variances tie at the non-leaf boundary within {tol}"),
                candidates: tied,
            });
        }
    }
    let mut out = order[..non_leaves].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Factor analysis, smallest uniquenesses as non-leaves, PC on the non-leaf
/// block of `L L^T`, then leaf parents from the loadings.
pub fn fa_equvar(input: &CovInput, leaves: usize, cfg: &PipelineConfig) -> Result<DiscoveryResult> {
    let sp = shared_part(input, leaves, cfg)?;
    let n = sp.l.nrows();
    let non_leaves = smallest_variances(&sp.psi, n - leaves, cfg.equvar_tol)?;
    let leaf_set: Vec<usize> = (0..n).filter(|i| !non_leaves.contains(i)).collect();

    let xstar = &sp.l * sp.l.transpose();
    let block = linalg::submatrix(&xstar, &non_leaves, &non_leaves);
    let oracle = match input.n_samples() {
        None => CiOracle::population(block),
        Some(ns) => CiOracle::sample(block, ns, cfg.alpha),
    };
    let sub = pc(&oracle, non_leaves.len())?;

    let mut cpdag = Cpdag::empty(n);
    for &(a, b) in &sub.cpdag.directed {
        cpdag.directed.insert((non_leaves[a], non_leaves[b]));
    }
    for &(a, b) in &sub.cpdag.undirected {
        cpdag.add_undirected(non_leaves[a], non_leaves[b]);
    }
    let tol = recon_tol(input, cfg);
    let mut leaf_parents = BTreeMap::new();
    for &leaf in &leaf_set {
        let (ps, coef) = smallest_reconstruction(&sp.l, &non_leaves, leaf, tol)
            .ok_or_else(|| Error::Inconsistency(format!("leaf {leaf} is not reconstructed by non-leaf loadings")))?;
        for &p in &ps {
            cpdag.directed.insert((p, leaf));
        }
        leaf_parents.insert(leaf, ps.into_iter().zip(coef.iter().copied()).collect());
    }
    meek_closure(&mut cpdag);

    let mut diagnostics = Diagnostics {
        fa: sp.fa,
        audit: Some(audit(n, leaves, &sp.psi)),
        tests_run: sub.tests_run,
        tests_skipped: sub.tests_skipped,
        warnings: sp.warnings,
    };
    if let Some(a) = &diagnostics.audit {
        if !a.a1_holds {
            diagnostics.warnings.push(format!("leaf fraction {:.3} does not exceed c(n) = {:.3}", a.leaf_fraction, a.threshold));
        }
    }
    Ok(DiscoveryResult {
        method: "fa-equvar".into(),
        cpdag,
        leaf_set,
        estar_variances: sp.psi,
        leaf_parents,
        groups: None,
        graph: None,
        diagnostics,
    })
}

/// Factor analysis, then PC over `L L^T` skipping tests whose conditioning
/// set determines an endpoint.
pub fn fa_dpc(input: &CovInput, leaves: usize, cfg: &PipelineConfig) -> Result<DiscoveryResult> {
    let sp = shared_part(input, leaves, cfg)?;
    let n = sp.l.nrows();
    let xstar = &sp.l * sp.l.transpose();
    let oracle = match input.n_samples() {
        None => CiOracle { det_tol: POPULATION_DETERMINISM_TOL, ..CiOracle::population(xstar) },
        Some(ns) => CiOracle { det_tol: sample_determinism_tol(ns), ..CiOracle::sample(xstar, ns, cfg.alpha) },
    };
    let out = dpc(&oracle, n)?;
    Ok(DiscoveryResult {
        method: "fa-dpc".into(),
        cpdag: out.cpdag,
        leaf_set: Vec::new(),
        estar_variances: sp.psi.clone(),
        leaf_parents: BTreeMap::new(),
        groups: None,
        graph: None,
        diagnostics: Diagnostics {
            fa: sp.fa,
            audit: Some(audit(n, leaves, &sp.psi)),
            tests_run: out.tests_run,
            tests_skipped: out.tests_skipped,
            warnings: sp.warnings,
        },
    })
}

/// BIC choice of the leaf count: `l = n - r*` over every `r` with
/// non-negative degrees of freedom.
pub fn auto_leaf_count(cov: &DMatrix<f64>, n_samples: usize) -> Result<(usize, Vec<FaFit>)> {
    let n = cov.nrows();
    let moments = n * (n + 1) / 2;
    let cands: Vec<usize> = (1..n).filter(|&r| free_parameters(n, r) <= moments).collect();
    let (r, fits) = select_num_factors(cov, n_samples, &cands)?;
    Ok((n - r, fits))
}

/// Recursive decomposition, leaf rules and reconstruction on a mixing estimate.
///
/// With `equal_variance`, members whose `Var(E*)` exceeds the smallest one
/// are also labelled leaves.
pub fn oica_rgd_from_estimate(
    est: &MixingEstimate,
    labels: Vec<String>,
    rgd: &RgdConfig,
    equal_variance: Option<f64>,
) -> Result<DiscoveryResult> {
    let rows = est.standardized_rows();
    let mut groups = identify_leaves(&decompose(&rows, rgd)?, &rows, rgd);
    if let Some(tol) = equal_variance {
        groups = identify_leaves(&identify_leaves_equvar(&groups, &est.estar_var, tol)?, &rows, rgd);
    }
    let sem = reconstruct_graph(&groups, &rows, labels, rgd)?;
    let dag = sem.dag();
    let leaf_set = dag.leaf_nodes();
    let leaf_parents = leaf_set
        .iter()
        .map(|&l| (l, dag.parents(l).iter().map(|&p| (p, sem.weight(p, l))).collect()))
        .collect();
    let n = dag.n();
    Ok(DiscoveryResult {
        method: "oica-rgd".into(),
        cpdag: Cpdag::from_dag(dag),
        leaf_set: leaf_set.clone(),
        estar_variances: est.estar_var.clone(),
        leaf_parents,
        groups: Some(groups),
        graph: Some(GraphJson::from_sem(&sem)),
        diagnostics: Diagnostics {
            fa: None,
            audit: Some(audit(n, leaf_set.len(), &est.estar_var)),
            tests_run: 0,
            tests_skipped: 0,
            warnings: est.warnings.clone(),
        },
    })
}

/// Overcomplete ICA with `n - leaves` sources, then the recursive procedure.
pub fn oica_rgd(
    data: &Dataset,
    leaves: usize,
    oica: &OicaConfig,
    rgd: &RgdConfig,
    equal_variance: Option<f64>,
) -> Result<DiscoveryResult> {
    let n = data.n_vars();
    if leaves == 0 || leaves >= n {
        return Err(Error::Config(format!("leaf count must lie in [1, {}], got {leaves}", n.saturating_sub(1))));
    }
    let est = oica_fit(data, n - leaves, oica)?;
    oica_rgd_from_estimate(&est, data.labels.clone(), rgd, equal_variance)
}

/// The recursive procedure on the exact canonical representation of `model`.
pub fn oica_rgd_oracle(model: &CammeModel, equal_variance: Option<f64>) -> Result<DiscoveryResult> {
    let est = MixingEstimate::from_canonical(&build_canonical(model)?);
    oica_rgd_from_estimate(&est, model.labels().to_vec(), &RgdConfig::oracle(), equal_variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_tie_is_ambiguous() {
        let err = smallest_variances(&[0.3, 0.3, 0.305, 0.9], 2, 0.02).unwrap_err();
        match err {
            Error::Ambiguity { candidates, .. } => assert_eq!(candidates, vec![0, 1, 2]),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(smallest_variances(&[0.9, 0.3, 0.31, 0.5], 2, 0.02).unwrap(), vec![1, 2]);
    }

    #[test]
    fn top_factor_reproduces_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 2.0, -1.0, 1.0]);
        let m = &a * a.transpose();
        let l = top_factor(&m, 2);
        assert!(linalg::max_abs_diff(&(&l * l.transpose()), &m) < 1e-12);
    }
}
