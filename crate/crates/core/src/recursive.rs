//! Recursive group decomposition of `X~*` from the rows of `A_nl`, leaf
//! identification inside each group and reconstruction of the full graph.
//!
//! Rows are coefficient vectors over standardized non-leaf noise terms, so
//! `rows * rows^T` is the covariance of `X~*`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ci::{is_deterministic, partial_corr};
use crate::error::{Error, Result};
use crate::graph::WeightedDag;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgdConfig {
    /// Relative threshold of the entrywise-product criterion.
    pub ds_tol: f64,
    /// Relative L1 size below which a residual row counts as zero.
    pub det_tol: f64,
    /// Partial correlations at or below this count as independence.
    pub ci_tol: f64,
    /// Residual-variance ratio below which a variable counts as determined.
    pub var_det_tol: f64,
    /// Standardized regression coefficients at or below this count as zero.
    pub coef_tol: f64,
    /// Relative residual norm accepted when reconstructing a leaf row.
    pub recon_tol: f64,
    /// Largest conditioning set searched by the leaf rules.
    pub max_cond: usize,
}

impl RgdConfig {
    /// Exact rows, e.g. from a known model.
    pub fn oracle() -> Self {
        RgdConfig {
            ds_tol: 1e-8,
            det_tol: 1e-8,
            ci_tol: 1e-7,
            var_det_tol: 1e-8,
            coef_tol: 1e-6,
            recon_tol: 1e-6,
            max_cond: 12,
        }
    }

    /// Rows estimated from data.
    pub fn estimated() -> Self {
        RgdConfig {
            ds_tol: 0.05,
            det_tol: 0.1,
            ci_tol: 0.1,
            var_det_tol: 0.05,
            coef_tol: 0.1,
            recon_tol: 0.15,
            max_cond: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    #[serde(rename = "A5")]
    A5,
    #[serde(rename = "A6")]
    A6,
    #[serde(rename = "A7")]
    A7,
    SameVariance,
    /// Every other member is a leaf.
    Completion,
    Singleton,
    /// Zero row: the node shares no noise term with anything.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule: Rule,
    /// The other member (A5, A6) or later node (A7) involved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partner: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub conditioning: Vec<usize>,
}

impl Evidence {
    fn bare(rule: Rule) -> Self {
        Evidence { rule, partner: None, conditioning: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Sorted node indices.
    pub members: Vec<usize>,
    /// Node picked as root when the group was formed.
    pub root: usize,
    pub non_leaf: Option<usize>,
    pub non_leaf_rule: Option<Rule>,
    pub leaves: BTreeMap<usize, Evidence>,
}

impl Group {
    pub fn is_resolved(&self) -> bool {
        self.unresolved().is_empty()
    }

    /// Members labelled neither leaf nor non-leaf.
    pub fn unresolved(&self) -> Vec<usize> {
        self.members
            .iter()
            .copied()
            .filter(|m| Some(*m) != self.non_leaf && !self.leaves.contains_key(m))
            .collect()
    }

    fn label_leaf(&mut self, node: usize, ev: Evidence) -> bool {
        if Some(node) == self.non_leaf || self.leaves.contains_key(&node) {
            return false;
        }
        self.leaves.insert(node, ev);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveGroups {
    pub n: usize,
    pub groups: Vec<Group>,
}

impl RecursiveGroups {
    pub fn group_of(&self, node: usize) -> usize {
        self.groups.iter().position(|g| g.members.contains(&node)).expect("groups partition the nodes")
    }

    pub fn is_resolved(&self) -> bool {
        self.groups.iter().all(Group::is_resolved)
    }

    pub fn leaf_set(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.groups.iter().flat_map(|g| g.leaves.keys().copied()).collect();
        out.sort_unstable();
        out
    }

    pub fn non_leaves(&self) -> Vec<usize> {
        self.groups.iter().filter_map(|g| g.non_leaf).collect()
    }

    /// `"A5"`, `"A6"`, ..., `"non-leaf"` or `"unresolved"`.
    pub fn provenance(&self, node: usize) -> String {
        let g = &self.groups[self.group_of(node)];
        if g.non_leaf == Some(node) {
            return "non-leaf".into();
        }
        match g.leaves.get(&node) {
            Some(ev) => serde_json::to_value(ev.rule).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            None => "unresolved".into(),
        }
    }

    /// Member sets in group order.
    pub fn member_sets(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.members.clone()).collect()
    }
}

/// `alpha = rows[j] - (rows[j] . rows[i] / |rows[i]|^2) rows[i]`
pub fn residual_coeffs(rows: &DMatrix<f64>, i: usize, j: usize) -> Result<DVector<f64>> {
    let ri = rows.row(i).transpose();
    let rj = rows.row(j).transpose();
    residual_of(&ri, &rj).ok_or(Error::DegeneratePredictor(i))
}

fn residual_of(ri: &DVector<f64>, rj: &DVector<f64>) -> Option<DVector<f64>> {
    let nn = ri.norm_squared();
    if nn == 0.0 {
        return None;
    }
    Some(rj - ri * (rj.dot(ri) / nn))
}

/// `|alpha o row|_1 <= tol`, the entrywise-product independence criterion.
pub fn ds_independent(alpha: &DVector<f64>, predictor_row: &DVector<f64>, tol: f64) -> bool {
    alpha.component_mul(predictor_row).lp_norm(1) <= tol
}

/// Criterion with the tolerance scaled by `|alpha|_1 |row|_inf`.
fn ds_independent_rel(alpha: &DVector<f64>, row: &DVector<f64>, rel: f64) -> bool {
    ds_independent(alpha, row, rel * alpha.lp_norm(1) * row.amax())
}

/// Build the ordered groups. Within-group labels are left empty apart from
/// zero rows, which join the first group as leaves.
pub fn decompose(rows: &DMatrix<f64>, cfg: &RgdConfig) -> Result<RecursiveGroups> {
    let n = rows.nrows();
    let mut cur: Vec<DVector<f64>> = (0..n).map(|i| rows.row(i).transpose()).collect();
    let max_l1 = cur.iter().map(|r| r.lp_norm(1)).fold(0.0, f64::max);
    let (zeros, mut active): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| max_l1 == 0.0 || cur[i].lp_norm(1) <= cfg.det_tol * max_l1);

    let mut groups = Vec::new();
    while !active.is_empty() {
        let root = active.iter().copied().find(|&i| {
            active
                .iter()
                .filter(|&&j| j != i)
                .all(|&j| {
                    residual_of(&cur[i], &cur[j]).is_some_and(|a| {
                        a.lp_norm(1) <= cfg.det_tol * cur[j].lp_norm(1) || ds_independent_rel(&a, &cur[i], cfg.ds_tol)
                    })
                })
        });
        let Some(root) = root else {
            return Err(Error::Inconsistency(format!(
                "no root cause among remaining nodes {active:?}: residuals are dependent on every candidate"
            )));
        };
        let mut members = vec![root];
        let mut rest = Vec::new();
        let mut next = cur.clone();
        for &j in active.iter().filter(|&&j| j != root) {
            let alpha = residual_of(&cur[root], &cur[j]).expect("root row is non-zero");
            if alpha.lp_norm(1) <= cfg.det_tol * cur[j].lp_norm(1) {
                members.push(j);
            } else {
                next[j] = alpha;
                rest.push(j);
            }
        }
        members.sort_unstable();
        groups.push(Group { members, root, non_leaf: None, non_leaf_rule: None, leaves: BTreeMap::new() });
        cur = next;
        active = rest;
    }

    if !zeros.is_empty() {
        if groups.is_empty() {
            groups.push(Group {
                members: Vec::new(),
                root: zeros[0],
                non_leaf: None,
                non_leaf_rule: None,
                leaves: BTreeMap::new(),
            });
        }
        let first = &mut groups[0];
        for z in zeros {
            first.members.push(z);
            first.leaves.insert(z, Evidence::bare(Rule::Degenerate));
        }
        first.members.sort_unstable();
    }
    Ok(RecursiveGroups { n, groups })
}

/// Conditional-independence queries on the covariance implied by the rows.
struct Implied<'a> {
    cov: DMatrix<f64>,
    rows: &'a DMatrix<f64>,
    cfg: &'a RgdConfig,
}

impl<'a> Implied<'a> {
    fn new(rows: &'a DMatrix<f64>, cfg: &'a RgdConfig) -> Self {
        Implied { cov: rows * rows.transpose(), rows, cfg }
    }

    fn determined(&self, target: usize, s: &[usize]) -> bool {
        !s.is_empty() && is_deterministic(&self.cov, target, s, self.cfg.var_det_tol)
    }

    /// Conditional independence where `s` determines neither endpoint.
    fn nondet_ci(&self, u: usize, v: usize, s: &[usize]) -> bool {
        if self.cov[(u, u)] <= 0.0 || self.cov[(v, v)] <= 0.0 || self.determined(u, s) || self.determined(v, s) {
            return false;
        }
        partial_corr(&self.cov, u, v, s).is_some_and(|r| r.abs() <= self.cfg.ci_tol)
    }

    /// First subset of `pool` (by size, then lexicographic) separating `u` and `v`.
    fn find_separator(&self, u: usize, v: usize, pool: &[usize]) -> Option<Vec<usize>> {
        let cap = self.cfg.max_cond.min(pool.len());
        (0..=cap).find_map(|k| {
            crate::ci::combinations_of(pool, k).into_iter().find(|s| self.nondet_ci(u, v, s))
        })
    }

    /// Indices of predictors with non-negligible standardized coefficient.
    fn support(&self, target: usize, basis: &[usize]) -> Vec<usize> {
        let (coef, _) = fit_on(self.rows, basis, target);
        let t = self.rows.row(target).norm();
        basis
            .iter()
            .zip(coef.iter())
            .filter(|(&p, &c)| t > 0.0 && (c * self.rows.row(p).norm() / t).abs() > self.cfg.coef_tol)
            .map(|(&p, _)| p)
            .collect()
    }
}

fn fit_on(rows: &DMatrix<f64>, basis: &[usize], target: usize) -> (DVector<f64>, DVector<f64>) {
    let b: Vec<DVector<f64>> = basis.iter().map(|&p| rows.row(p).transpose()).collect();
    linalg::fit_rows(&b, &rows.row(target).transpose())
}

fn pool_upto(groups: &RecursiveGroups, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = groups.groups[..=k].iter().flat_map(|g| g.members.iter().copied()).collect();
    v.sort_unstable();
    v
}

fn rule_a6(groups: &mut RecursiveGroups, k: usize, ci: &Implied) -> bool {
    let pool = pool_upto(groups, k);
    let g = &groups.groups[k];
    let cands: Vec<usize> = g.members.iter().copied().filter(|&m| Some(m) != g.non_leaf).collect();
    let mut found = Vec::new();
    for (a, &o) in cands.iter().enumerate() {
        for &q in &cands[a + 1..] {
            let g = &groups.groups[k];
            if g.leaves.contains_key(&o) && g.leaves.contains_key(&q) {
                continue;
            }
            let p: Vec<usize> = pool.iter().copied().filter(|&x| x != o && x != q).collect();
            if let Some(s) = ci.find_separator(o, q, &p) {
                found.push((o, q, s));
            }
        }
    }
    let mut changed = false;
    let g = &mut groups.groups[k];
    for (o, q, s) in found {
        changed |= g.label_leaf(o, Evidence { rule: Rule::A6, partner: Some(q), conditioning: s.clone() });
        changed |= g.label_leaf(q, Evidence { rule: Rule::A6, partner: Some(o), conditioning: s });
    }
    changed
}

fn rule_a5(groups: &mut RecursiveGroups, k: usize, ci: &Implied) -> bool {
    if k == 0 || groups.groups[..k].iter().any(|g| g.non_leaf.is_none()) {
        return false;
    }
    let basis: Vec<usize> = groups.groups[..k].iter().filter_map(|g| g.non_leaf).collect();
    let g = &groups.groups[k];
    let supports: Vec<(usize, Vec<usize>)> = g.members.iter().map(|&m| (m, ci.support(m, &basis))).collect();
    let mut found = Vec::new();
    for (m, sm) in &supports {
        if Some(*m) == g.non_leaf {
            continue;
        }
        let smaller = supports
            .iter()
            .find(|(o, so)| o != m && so.len() < sm.len() && so.iter().all(|x| sm.contains(x)));
        if let Some((o, _)) = smaller {
            found.push((*m, *o, sm.clone()));
        }
    }
    let g = &mut groups.groups[k];
    let mut changed = false;
    for (m, o, s) in found {
        changed |= g.label_leaf(m, Evidence { rule: Rule::A5, partner: Some(o), conditioning: s });
    }
    changed
}

fn rule_a7(groups: &mut RecursiveGroups, k: usize, ci: &Implied) -> bool {
    let later: Vec<usize> = groups.groups[k + 1..].iter().flat_map(|g| g.members.iter().copied()).collect();
    if later.is_empty() {
        return false;
    }
    let pool = pool_upto(groups, k);
    let members = groups.groups[k].members.clone();
    let without = |u: usize| -> Vec<usize> { pool.iter().copied().filter(|&x| x != u).collect() };
    let s_set: Vec<usize> = later
        .iter()
        .copied()
        .filter(|&v| members.iter().any(|&u| ci.find_separator(u, v, &without(u)).is_none()))
        .collect();
    let g = &groups.groups[k];
    let mut found = Vec::new();
    for &u in members.iter().filter(|&&u| Some(u) != g.non_leaf && !g.leaves.contains_key(&u)) {
        let p = without(u);
        if let Some((v, s)) = s_set.iter().find_map(|&v| ci.find_separator(u, v, &p).map(|s| (v, s))) {
            found.push((u, v, s));
        }
    }
    let g = &mut groups.groups[k];
    let mut changed = false;
    for (u, v, s) in found {
        changed |= g.label_leaf(u, Evidence { rule: Rule::A7, partner: Some(v), conditioning: s });
    }
    changed
}

fn complete(groups: &mut RecursiveGroups) -> bool {
    let mut changed = false;
    for g in &mut groups.groups {
        if g.non_leaf.is_some() {
            continue;
        }
        let open = g.unresolved();
        if open.len() == 1 {
            g.non_leaf = Some(open[0]);
            g.non_leaf_rule = Some(if g.members.len() == 1 { Rule::Singleton } else { Rule::Completion });
            changed = true;
        }
    }
    changed
}

fn fixpoint(groups: &RecursiveGroups, rows: &DMatrix<f64>, cfg: &RgdConfig, rules: &[Rule]) -> RecursiveGroups {
    let ci = Implied::new(rows, cfg);
    let mut out = groups.clone();
    complete(&mut out);
    loop {
        let mut changed = false;
        for k in 0..out.groups.len() {
            if out.groups[k].is_resolved() {
                continue;
            }
            for rule in rules {
                changed |= match rule {
                    Rule::A6 => rule_a6(&mut out, k, &ci),
                    Rule::A5 => rule_a5(&mut out, k, &ci),
                    Rule::A7 => rule_a7(&mut out, k, &ci),
                    _ => false,
                };
            }
            changed |= complete(&mut out);
        }
        if !changed {
            return out;
        }
    }
}

/// Leaves found by looking at earlier groups (rules A6 then A5).
pub fn identify_leaves_backward(groups: &RecursiveGroups, rows: &DMatrix<f64>, cfg: &RgdConfig) -> RecursiveGroups {
    fixpoint(groups, rows, cfg, &[Rule::A6, Rule::A5])
}

/// Leaves found by looking at later nodes (rule A7).
pub fn identify_leaves_forward(groups: &RecursiveGroups, rows: &DMatrix<f64>, cfg: &RgdConfig) -> RecursiveGroups {
    fixpoint(groups, rows, cfg, &[Rule::A7])
}

/// All structural rules until nothing changes.
pub fn identify_leaves(groups: &RecursiveGroups, rows: &DMatrix<f64>, cfg: &RgdConfig) -> RecursiveGroups {
    fixpoint(groups, rows, cfg, &[Rule::A6, Rule::A5, Rule::A7])
}

/// Equal measurement-error variances: members whose `Var(E*)` exceeds the
/// global minimum by more than `rel_tol` are leaves.
pub fn identify_leaves_equvar(groups: &RecursiveGroups, estar_var: &[f64], rel_tol: f64) -> Result<RecursiveGroups> {
    if estar_var.len() != groups.n {
        return Err(Error::Config(format!("expected {} variances, got {}", groups.n, estar_var.len())));
    }
    let min = estar_var.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = groups.clone();
    for g in &mut out.groups {
        for m in g.unresolved() {
            if estar_var[m] > min * (1.0 + rel_tol) {
                g.label_leaf(m, Evidence::bare(Rule::SameVariance));
            }
        }
        let live = g.members.iter().any(|m| g.leaves.get(m).is_none_or(|e| e.rule != Rule::Degenerate));
        if live && g.non_leaf.is_none() && g.unresolved().is_empty() {
            return Err(Error::Ambiguity {
                message: "every member of a group has variance above the minimum".into(),
                candidates: g.members.clone(),
            });
        }
    }
    complete(&mut out);
    Ok(out)
}

/// Recover the weighted graph from fully labelled groups.
pub fn reconstruct_graph(
    groups: &RecursiveGroups,
    rows: &DMatrix<f64>,
    labels: Vec<String>,
    cfg: &RgdConfig,
) -> Result<WeightedDag> {
    let n = groups.n;
    if labels.len() != n || rows.nrows() != n {
        return Err(Error::Config("rows, labels and groups disagree on node count".into()));
    }
    let open: Vec<usize> = groups.groups.iter().flat_map(Group::unresolved).collect();
    if !open.is_empty() {
        return Err(Error::Ambiguity { message: "groups with unidentified leaves".into(), candidates: open });
    }
    let ci = Implied::new(rows, cfg);
    let mut edges = Vec::new();
    let mut earlier: Vec<usize> = Vec::new();
    for g in &groups.groups {
        if let Some(v) = g.non_leaf {
            let parents = ci.support(v, &earlier);
            let (coef, _) = fit_on(rows, &parents, v);
            edges.extend(parents.iter().zip(coef.iter()).map(|(&p, &c)| (p, v, c)));
            earlier.push(v);
        }
        for (&leaf, ev) in &g.leaves {
            if ev.rule == Rule::Degenerate {
                continue;
            }
            let (parents, coef) = smallest_reconstruction(rows, &earlier, leaf, cfg.recon_tol).ok_or_else(|| {
                Error::Inconsistency(format!("leaf {leaf} is not reconstructed by earlier non-leaf rows"))
            })?;
            edges.extend(parents.iter().zip(coef.iter()).map(|(&p, &c)| (p, leaf, c)));
        }
    }
    WeightedDag::from_edges(labels, &edges)
}

/// Smallest subset of `cands` (by size, then lexicographic) whose rows rebuild
/// row `target` with relative residual at most `tol`.
pub fn smallest_reconstruction(
    rows: &DMatrix<f64>,
    cands: &[usize],
    target: usize,
    tol: f64,
) -> Option<(Vec<usize>, DVector<f64>)> {
    let scale = rows.row(target).norm();
    for k in 1..=cands.len() {
        for s in crate::ci::combinations_of(cands, k) {
            let (coef, resid) = fit_on(rows, &s, target);
            if resid.norm() <= tol * scale && coef.iter().all(|c| c.abs() > 0.0) {
                return Some((s, coef));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one_rows(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, a, b, 0.0, 1.0])
    }

    #[test]
    fn residual_examples() {
        let (a, b) = (0.8, 1.3);
        let rows = example_one_rows(a, b);
        let alpha = residual_coeffs(&rows, 0, 1).unwrap();
        assert!((alpha[0]).abs() < 1e-15 && (alpha[1] - b).abs() < 1e-15);
        assert!(residual_coeffs(&rows, 1, 1).unwrap().norm() < 1e-15);
        assert_eq!(residual_coeffs(&rows, 0, 2).unwrap(), DVector::from_vec(vec![0.0, 1.0]));
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(residual_coeffs(&zero, 0, 1), Err(Error::DegeneratePredictor(0))));
    }

    #[test]
    fn criterion_examples() {
        let (a, b) = (0.8, 1.3);
        let rows = example_one_rows(a, b);
        let alpha = residual_coeffs(&rows, 0, 1).unwrap();
        assert!(ds_independent(&alpha, &rows.row(0).transpose(), 1e-12));
        // reverse direction
        let rev = residual_coeffs(&rows, 1, 0).unwrap();
        let expected = DVector::from_vec(vec![b * b, -a * b]) / (a * a + b * b);
        assert!((&rev - &expected).norm() < 1e-14);
        let l1 = rev.component_mul(&rows.row(1).transpose()).lp_norm(1);
        assert!((l1 - 2.0 * a * b * b / (a * a + b * b)).abs() < 1e-14);
        assert!(!ds_independent(&rev, &rows.row(1).transpose(), 1e-6));
        assert!(ds_independent(&DVector::zeros(2), &rows.row(1).transpose(), 0.0));
    }

    #[test]
    fn example_one_decomposes_and_reconstructs() {
        let rows = example_one_rows(0.8, -0.6);
        let cfg = RgdConfig::oracle();
        let g = decompose(&rows, &cfg).unwrap();
        assert_eq!(g.member_sets(), vec![vec![0], vec![1, 2]]);
        let g = identify_leaves(&g, &rows, &cfg);
        assert_eq!(g.leaf_set(), vec![1]);
        assert_eq!(g.provenance(1), "A5");
        let sem = reconstruct_graph(&g, &rows, crate::graph::default_labels(3), &cfg).unwrap();
        assert_eq!(sem.weighted_edges().len(), 2);
        assert!((sem.weight(0, 1) - 0.8).abs() < 1e-12);
        assert!((sem.weight(2, 1) + 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_rows_are_degenerate_leaves() {
        let rows = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 2.0]);
        let g = decompose(&rows, &RgdConfig::oracle()).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].members, vec![0, 1, 2]);
        assert_eq!(g.provenance(1), "degenerate");
    }

    #[test]
    fn equal_variance_ties_are_ambiguous() {
        let rows = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let g = decompose(&rows, &RgdConfig::oracle()).unwrap();
        let out = identify_leaves_equvar(&g, &[1.0, 1.0], 0.02).unwrap();
        assert!(!out.is_resolved());
        let out = identify_leaves_equvar(&g, &[1.0, 2.0], 0.02).unwrap();
        assert_eq!(out.groups[0].non_leaf, Some(0));
    }
}
