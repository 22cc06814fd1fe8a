use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Directed acyclic graph over `n` labelled nodes.
///
/// Edges are `(parent, child)` pairs. Construction rejects self-loops,
/// out-of-range endpoints, duplicates and directed cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    labels: Vec<String>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

pub fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

impl Dag {
    pub fn new(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = labels.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(from, to) in edges {
            if from >= n || to >= n {
                return Err(Error::Structural(format!(
                    "edge ({from}, {to}) out of range for {n} nodes"
                )));
            }
            if from == to {
                return Err(Error::Structural(format!("self-edge on node {from}")));
            }
            if !seen.insert((from, to)) {
                return Err(Error::Structural(format!("duplicate edge ({from}, {to})")));
            }
            parents[to].push(from);
            children[from].push(to);
        }
        parents.iter_mut().for_each(|p| p.sort_unstable());
        children.iter_mut().for_each(|c| c.sort_unstable());
        let dag = Dag { labels, parents, children };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn with_default_labels(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(default_labels(n), edges)
    }

    pub fn empty(n: usize) -> Self {
        Dag {
            labels: default_labels(n),
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.children[from].binary_search(&to).is_ok()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    /// All edges sorted lexicographically by `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (from, ch) in self.children.iter().enumerate() {
            out.extend(ch.iter().map(|&to| (from, to)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Kahn's algorithm, always releasing the lowest-index ready node first.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.n();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Structural("graph contains a directed cycle".into()));
        }
        Ok(order)
    }

    /// Nodes with out-degree zero. Isolated nodes count as leaves.
    pub fn leaf_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.children[i].is_empty()).collect()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Strict descendants of `i`.
    pub fn descendants(&self, i: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = self.children[i].clone();
        while let Some(v) = stack.pop() {
            if out.insert(v) {
                stack.extend_from_slice(&self.children[v]);
            }
        }
        out
    }

    /// Strict ancestors of the nodes in `set`.
    pub fn ancestors_of_set(&self, set: &[usize]) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = set.iter().flat_map(|&s| self.parents[s].iter().copied()).collect();
        while let Some(v) = stack.pop() {
            if out.insert(v) {
                stack.extend_from_slice(&self.parents[v]);
            }
        }
        out
    }

    /// True when a directed path `from -> ... -> to` of length at least one exists.
    pub fn has_directed_path(&self, from: usize, to: usize) -> bool {
        self.descendants(from).contains(&to)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Structural("label count does not match node count".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_has_unique_order() {
        let dag = Dag::with_default_labels(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(dag.topological_order().unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_graph_order_is_a_permutation() {
        let dag = Dag::empty(3);
        let mut order = dag.topological_order().unwrap();
        order.sort_unstable();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_cycles_and_self_edges() {
        assert!(matches!(
            Dag::with_default_labels(3, &[(0, 1), (1, 2), (2, 0)]),
            Err(Error::Structural(_))
        ));
        assert!(Dag::with_default_labels(2, &[(1, 1)]).is_err());
        assert!(Dag::with_default_labels(2, &[(0, 2)]).is_err());
        assert!(Dag::with_default_labels(2, &[(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn isolated_nodes_are_leaves() {
        assert_eq!(Dag::empty(2).leaf_nodes(), vec![0, 1]);
    }

    #[test]
    fn star_leaves() {
        let dag = Dag::with_default_labels(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(dag.leaf_nodes(), vec![1, 2, 3]);
    }
}
