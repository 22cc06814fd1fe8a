//! Structural audit of the identifiability assumptions on a known model.

use serde::{Deserialize, Serialize};

use super::canonical::{build_canonical, CanonicalRep};
use super::dag::Dag;
use super::dsep::d_separated;
use super::model::CammeModel;
use crate::ci::combinations_of;
use crate::error::Result;
use crate::factor::identifiability_thresholds;
use crate::recursive::{decompose, RgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Largest conditioning set tried when searching for witnesses.
    pub max_cond: usize,
    /// Relative spread tolerated among measurement-error variances for A2.
    pub equal_variance_tol: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { max_cond: 12, equal_variance_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict<W> {
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<W>,
}

impl<W> Verdict<W> {
    fn from(witness: Option<W>) -> Self {
        Verdict { holds: witness.is_some(), witness }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1Report {
    pub holds: bool,
    pub leaves: usize,
    pub n: usize,
    pub ratio: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Report {
    pub holds: bool,
    pub min_variance: f64,
    pub max_variance: f64,
}

/// Parents `p` of `j` and `q` of `k` with a set separating them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3PairWitness {
    pub p: usize,
    pub q: usize,
    pub separator: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3SingleWitness {
    pub r: usize,
    pub separator: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3Report {
    pub holds: bool,
    /// Every leaf pair `(j, k)`.
    pub leaf_pairs: Vec<(usize, usize, Verdict<A3PairWitness>)>,
    /// Every non-adjacent (leaf, non-leaf) pair.
    pub leaf_non_leaf: Vec<(usize, usize, Verdict<A3SingleWitness>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A6Witness {
    pub conditioning: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A7Witness {
    /// Later node that is a child of the group's non-leaf.
    pub node: usize,
    pub conditioning: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafAudit {
    pub leaf: usize,
    pub group: usize,
    /// A parent of the leaf that is not a parent of the group's non-leaf.
    pub a5: Verdict<usize>,
    /// Other leaves of the same group it is separated from, with the set.
    pub a6: Vec<(usize, A6Witness)>,
    pub a7: Verdict<A7Witness>,
}

impl LeafAudit {
    pub fn identifiable(&self) -> bool {
        self.a5.holds || !self.a6.is_empty() || self.a7.holds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: A1Report,
    pub a2: A2Report,
    pub a3: A3Report,
    /// Every noise term of the SEM is non-Gaussian.
    pub a4: bool,
    pub groups: Vec<Vec<usize>>,
    /// Leaves with a zero row in `A_nl` (isolated nodes); they need no rule.
    pub degenerate: Vec<usize>,
    pub leaves: Vec<LeafAudit>,
}

impl AssumptionReport {
    pub fn a5_leaves(&self) -> Vec<usize> {
        self.leaves.iter().filter(|a| a.a5.holds).map(|a| a.leaf).collect()
    }

    pub fn a6_leaves(&self) -> Vec<usize> {
        self.leaves.iter().filter(|a| !a.a6.is_empty()).map(|a| a.leaf).collect()
    }

    pub fn a7_leaves(&self) -> Vec<usize> {
        self.leaves.iter().filter(|a| a.a7.holds).map(|a| a.leaf).collect()
    }

    /// Some rule applies to every leaf.
    pub fn every_leaf_identifiable(&self) -> bool {
        self.leaves.iter().all(LeafAudit::identifiable)
    }

    /// Identifiability results whose checkable hypotheses hold. A0 is not
    /// checkable and is taken for granted.
    pub fn applicable(&self) -> Vec<Applicable> {
        let some_backward = self.leaves.iter().any(|a| a.a5.holds || !a.a6.is_empty());
        let some_forward = self.leaves.iter().any(|a| a.a7.holds);
        let rows: [(bool, &str, &[&str], &str); 7] = [
            (self.a1.holds && self.a2.holds, "fa-equvar", &["A0", "A1", "A2"], "equivalence class and leaf nodes"),
            (self.a1.holds && self.a3.holds, "fa-dpc", &["A0", "A1", "A3"], "equivalence class"),
            (self.a4 && self.a1.holds && self.a2.holds, "oica-equvar", &["A0", "A4", "A1", "A2"], "full graph"),
            (self.a4, "oica-groups", &["A0", "A4"], "recursive group decomposition and the order between groups"),
            (self.a4 && some_backward, "oica-backward", &["A0", "A4", "A5 or A6 for some leaves"], "group decomposition and those leaves"),
            (self.a4 && some_forward, "oica-forward", &["A0", "A4", "A7 for some leaves"], "group decomposition and those leaves"),
            (self.a4 && self.every_leaf_identifiable(), "oica-rgd", &["A0", "A4", "A5, A6 or A7 for each leaf"], "full graph"),
        ];
        rows.into_iter()
            .filter(|r| r.0)
            .map(|(_, method, requires, identifies)| Applicable {
                method: method.into(),
                requires: requires.iter().map(|s| s.to_string()).collect(),
                identifies: identifies.into(),
            })
            .collect()
    }
}

/// One identifiability result: the procedure, its hypotheses and what it recovers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applicable {
    pub method: String,
    pub requires: Vec<String>,
    pub identifies: String,
}

pub fn check_assumptions(model: &CammeModel) -> Result<AssumptionReport> {
    check_assumptions_with(model, &AuditConfig::default())
}

pub fn check_assumptions_with(model: &CammeModel, cfg: &AuditConfig) -> Result<AssumptionReport> {
    let dag = model.dag();
    let n = dag.n();
    let cr = build_canonical(model)?;
    let l = cr.leaf_set.len();
    let (_, c_n) = identifiability_thresholds(n);
    let ratio = l as f64 / n as f64;
    let a1 = A1Report { holds: ratio > c_n, leaves: l, n, ratio, threshold: c_n };

    let min = model.me_variances.iter().copied().fold(f64::INFINITY, f64::min);
    let max = model.me_variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a2 = A2Report { holds: max - min <= cfg.equal_variance_tol * max.abs().max(1.0), min_variance: min, max_variance: max };

    let a3 = audit_a3(dag, &cr, cfg);

    let rows = cr.standardized_a_nl();
    let groups = decompose(&rows, &RgdConfig::oracle())?;
    let degenerate: Vec<usize> = (0..n).filter(|&i| rows.row(i).norm() == 0.0).collect();
    let mut leaves = Vec::new();
    for (k, g) in groups.groups.iter().enumerate() {
        let non_leaf = g.members.iter().copied().find(|m| !cr.is_leaf(*m));
        let Some(nl) = non_leaf else { continue };
        let pool: Vec<usize> = groups.groups[..=k]
            .iter()
            .flat_map(|h| h.members.iter().copied())
            .filter(|&m| !cr.is_leaf(m))
            .collect();
        let later: Vec<usize> = groups.groups[k + 1..].iter().flat_map(|h| h.members.iter().copied()).collect();
        let group_leaves: Vec<usize> =
            g.members.iter().copied().filter(|m| cr.is_leaf(*m) && !degenerate.contains(m)).collect();
        for &o in &group_leaves {
            let a5 = dag.parents(o).iter().copied().find(|&p| p != nl && !dag.has_edge(p, nl));
            let a6 = group_leaves
                .iter()
                .filter(|&&q| q != o)
                .filter_map(|&q| {
                    first_subset(&pool, cfg.max_cond, |s| {
                        d_separated(dag, o, q, s) && !cr.determines(s, o) && !cr.determines(s, q)
                    })
                    .map(|s| (q, A6Witness { conditioning: s }))
                })
                .collect();
            let a7 = later.iter().filter(|&&v| dag.has_edge(nl, v)).find_map(|&v| {
                first_subset(&pool, cfg.max_cond, |s| {
                    !dag.parents(o).iter().all(|p| s.contains(p)) && d_separated(dag, o, v, s)
                })
                .map(|s| A7Witness { node: v, conditioning: s })
            });
            leaves.push(LeafAudit { leaf: o, group: k, a5: Verdict::from(a5), a6, a7: Verdict::from(a7) });
        }
    }
    let a4 = model.noise.iter().all(|nz| !nz.is_gaussian());
    Ok(AssumptionReport { a1, a2, a3, a4, groups: groups.member_sets(), degenerate, leaves })
}

/// First subset of `pool` (by size, then lexicographic, up to `cap`) satisfying `ok`.
fn first_subset(pool: &[usize], cap: usize, mut ok: impl FnMut(&[usize]) -> bool) -> Option<Vec<usize>> {
    (0..=cap.min(pool.len())).find_map(|k| combinations_of(pool, k).into_iter().find(|s| ok(s)))
}

/// Separating sets are searched among ancestors of the two endpoints: two
/// nodes are d-separable iff their ancestors separate them, and ancestors of
/// any node are non-leaves.
fn separator(dag: &Dag, a: usize, b: usize, cap: usize) -> Option<Vec<usize>> {
    if a == b || dag.adjacent(a, b) {
        return None;
    }
    let anc: Vec<usize> = dag.ancestors_of_set(&[a, b]).into_iter().filter(|&v| v != a && v != b).collect();
    first_subset(&anc, cap, |s| d_separated(dag, a, b, s))
        .or_else(|| d_separated(dag, a, b, &anc).then_some(anc.clone()))
}

fn audit_a3(dag: &Dag, cr: &CanonicalRep, cfg: &AuditConfig) -> A3Report {
    let leaves = &cr.leaf_set;
    let mut leaf_pairs = Vec::new();
    for (x, &j) in leaves.iter().enumerate() {
        for &k in &leaves[x + 1..] {
            let w = dag.parents(j).iter().find_map(|&p| {
                dag.parents(k)
                    .iter()
                    .find_map(|&q| separator(dag, p, q, cfg.max_cond).map(|s| A3PairWitness { p, q, separator: s }))
            });
            leaf_pairs.push((j, k, Verdict::from(w)));
        }
    }
    let mut leaf_non_leaf = Vec::new();
    for &j in leaves {
        for &i in &cr.non_leaf_set {
            if dag.adjacent(i, j) {
                continue;
            }
            let w = dag
                .parents(j)
                .iter()
                .find_map(|&r| separator(dag, r, i, cfg.max_cond).map(|s| A3SingleWitness { r, separator: s }));
            leaf_non_leaf.push((j, i, Verdict::from(w)));
        }
    }
    let holds = leaf_pairs.iter().all(|p| p.2.holds) && leaf_non_leaf.iter().all(|p| p.2.holds);
    A3Report { holds, leaf_pairs, leaf_non_leaf }
}
