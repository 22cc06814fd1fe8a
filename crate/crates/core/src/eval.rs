//! Comparing a discovery result with the generating graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_canonical, cpdag_of, cpdag_with_known_leaves, CammeModel, Cpdag, NoiseSpec, WeightedDag};
use crate::pipelines::DiscoveryResult;
use crate::recursive::{decompose, RecursiveGroups, RgdConfig};

/// What the result is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTarget {
    Dag,
    Cpdag,
    CpdagKnownLeaves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMatch {
    /// Same groups in the same order.
    pub exact_order: bool,
    /// Best Jaccard overlap of each true group with an estimated group.
    pub jaccard: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: EvalTarget,
    pub shd: usize,
    /// Adjacency precision and recall; precision is 1 for an empty result.
    pub precision: f64,
    pub recall: f64,
    /// Fraction of nodes with the correct leaf status.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupMatch>,
    /// Largest coefficient error over the union of both edge sets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coef_max_abs_error: Option<f64>,
}

fn check_labels(truth: &WeightedDag, labels: &[String]) -> Result<()> {
    if truth.dag().labels() != labels {
        return Err(Error::Config(format!("label mismatch: truth {:?}, result {:?}", truth.dag().labels(), labels)));
    }
    Ok(())
}

fn adjacency_scores(truth: &BTreeSet<(usize, usize)>, est: &BTreeSet<(usize, usize)>) -> (f64, f64) {
    let hit = truth.intersection(est).count() as f64;
    let precision = if est.is_empty() { 1.0 } else { hit / est.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { hit / truth.len() as f64 };
    (precision, recall)
}

/// Groups of the true graph under exact rows, with unit noise variances
/// standing in when none are known.
pub fn true_groups(truth: &WeightedDag) -> Result<RecursiveGroups> {
    let n = truth.n();
    let model = CammeModel::new(truth.clone(), vec![NoiseSpec::Gaussian { variance: 1.0 }; n], vec![0.0; n])?;
    decompose(&build_canonical(&model)?.standardized_a_nl(), &RgdConfig::oracle())
}

fn group_match(truth: &RecursiveGroups, est: &RecursiveGroups) -> GroupMatch {
    let t = truth.member_sets();
    let e = est.member_sets();
    let jaccard = t
        .iter()
        .map(|g| {
            let g: BTreeSet<_> = g.iter().collect();
            e.iter()
                .map(|h| {
                    let h: BTreeSet<_> = h.iter().collect();
                    g.intersection(&h).count() as f64 / g.union(&h).count() as f64
                })
                .fold(0.0, f64::max)
        })
        .collect();
    GroupMatch { exact_order: t == e, jaccard }
}

/// Score `result` against the weighted graph that generated the data.
///
/// Results carrying a graph are compared as DAGs, results with a leaf set
/// against the equivalence class refined by the true leaves, others against
/// the plain equivalence class.
pub fn evaluate(truth: &WeightedDag, result: &DiscoveryResult) -> Result<EvalReport> {
    check_labels(truth, &result.cpdag.labels)?;
    let dag = truth.dag();
    let (target, reference) = if result.graph.is_some() {
        (EvalTarget::Dag, Cpdag::from_dag(dag))
    } else if !result.leaf_set.is_empty() {
        (EvalTarget::CpdagKnownLeaves, cpdag_with_known_leaves(dag, &dag.leaf_nodes()))
    } else {
        (EvalTarget::Cpdag, cpdag_of(dag))
    };
    let (precision, recall) = adjacency_scores(&reference.skeleton(), &result.cpdag.skeleton());
    let leaf_accuracy = (!result.leaf_set.is_empty()).then(|| {
        let n = dag.n();
        (0..n).filter(|&i| dag.is_leaf(i) == result.leaf_set.contains(&i)).count() as f64 / n as f64
    });
    let groups = match &result.groups {
        Some(g) => Some(group_match(&true_groups(truth)?, g)),
        None => None,
    };
    let coef_max_abs_error = match &result.graph {
        Some(g) => Some(coef_error(truth, &g.to_sem()?)),
        None => None,
    };
    Ok(EvalReport { target, shd: reference.shd(&result.cpdag), precision, recall, leaf_accuracy, groups, coef_max_abs_error })
}

/// Score one weighted DAG against another.
pub fn evaluate_graph(truth: &WeightedDag, est: &WeightedDag) -> Result<EvalReport> {
    check_labels(truth, est.dag().labels())?;
    let t = Cpdag::from_dag(truth.dag());
    let e = Cpdag::from_dag(est.dag());
    let (precision, recall) = adjacency_scores(&t.skeleton(), &e.skeleton());
    let (tl, el) = (truth.dag().leaf_nodes(), est.dag().leaf_nodes());
    let n = truth.n();
    let leaf_accuracy = (0..n).filter(|i| tl.contains(i) == el.contains(i)).count() as f64 / n as f64;
    Ok(EvalReport {
        target: EvalTarget::Dag,
        shd: t.shd(&e),
        precision,
        recall,
        leaf_accuracy: Some(leaf_accuracy),
        groups: None,
        coef_max_abs_error: Some(coef_error(truth, est)),
    })
}

fn coef_error(a: &WeightedDag, b: &WeightedDag) -> f64 {
    (a.b() - b.b()).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{gc, gd, NoiseFamily};

    #[test]
    fn gc_against_gd_differs_by_one_edge() {
        let r = evaluate_graph(&gc(NoiseFamily::Gaussian).sem, &gd(NoiseFamily::Gaussian).sem).unwrap();
        assert_eq!(r.shd, 1);
        assert_eq!(r.recall, 1.0);
        assert!(r.precision < 1.0);
    }

    #[test]
    fn empty_result_has_zero_recall() {
        let truth = gc(NoiseFamily::Gaussian).sem;
        let empty = WeightedDag::from_edges(truth.dag().labels().to_vec(), &[]).unwrap();
        let r = evaluate_graph(&truth, &empty).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.shd, truth.dag().edge_count());
    }
}
