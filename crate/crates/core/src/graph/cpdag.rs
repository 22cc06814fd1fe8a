use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::dag::{default_labels, Dag};
use crate::error::{Error, Result};

/// Mark of the pair `(a, b)` in a partially directed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMark {
    Absent,
    /// `a -> b`
    Forward,
    /// `b -> a`
    Backward,
    Undirected,
}

/// Partially directed graph. Undirected pairs are stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cpdag {
    pub n: usize,
    pub labels: Vec<String>,
    pub directed: BTreeSet<(usize, usize)>,
    pub undirected: BTreeSet<(usize, usize)>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Cpdag {
    pub fn empty(n: usize) -> Self {
        Cpdag { n, labels: default_labels(n), directed: BTreeSet::new(), undirected: BTreeSet::new() }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }

    /// Every edge of `dag`, directed.
    pub fn from_dag(dag: &Dag) -> Self {
        let mut g = Cpdag::empty(dag.n()).with_labels(dag.labels().to_vec());
        g.directed = dag.edges().into_iter().collect();
        g
    }

    /// Undirected skeleton of `dag`.
    pub fn skeleton_of(dag: &Dag) -> Self {
        let mut g = Cpdag::empty(dag.n()).with_labels(dag.labels().to_vec());
        g.undirected = dag.edges().into_iter().map(|(a, b)| key(a, b)).collect();
        g
    }

    /// Checks the invariants: disjoint edge sets, no self-edges, indices in range.
    pub fn validate(&self) -> Result<()> {
        for &(a, b) in self.directed.iter().chain(&self.undirected) {
            if a == b || a >= self.n || b >= self.n {
                return Err(Error::Structural(format!("invalid edge ({a}, {b})")));
            }
        }
        for &(a, b) in &self.directed {
            if self.undirected.contains(&key(a, b)) || self.directed.contains(&(b, a)) {
                return Err(Error::Structural(format!("pair ({a}, {b}) carries two marks")));
            }
        }
        if self.labels.len() != self.n {
            return Err(Error::Structural("label count does not match node count".into()));
        }
        Ok(())
    }

    pub fn mark(&self, a: usize, b: usize) -> EdgeMark {
        if self.directed.contains(&(a, b)) {
            EdgeMark::Forward
        } else if self.directed.contains(&(b, a)) {
            EdgeMark::Backward
        } else if self.undirected.contains(&key(a, b)) {
            EdgeMark::Undirected
        } else {
            EdgeMark::Absent
        }
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.mark(a, b) != EdgeMark::Absent
    }

    pub fn is_directed(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
    }

    pub fn is_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&key(a, b))
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) {
        self.undirected.insert(key(a, b));
    }

    pub fn remove(&mut self, a: usize, b: usize) {
        self.undirected.remove(&key(a, b));
        self.directed.remove(&(a, b));
        self.directed.remove(&(b, a));
    }

    /// Turn an existing adjacency into `a -> b`.
    pub fn orient(&mut self, a: usize, b: usize) {
        self.remove(a, b);
        self.directed.insert((a, b));
    }

    pub fn neighbors(&self, a: usize) -> Vec<usize> {
        (0..self.n).filter(|&b| b != a && self.adjacent(a, b)).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.directed.len() + self.undirected.len()
    }

    /// Adjacent pairs `(min, max)` regardless of mark.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        self.directed.iter().map(|&(a, b)| key(a, b)).chain(self.undirected.iter().copied()).collect()
    }

    pub fn is_fully_directed(&self) -> bool {
        self.undirected.is_empty()
    }

    pub fn to_dag(&self) -> Result<Dag> {
        if !self.is_fully_directed() {
            return Err(Error::Structural("graph has undirected edges".into()));
        }
        let edges: Vec<_> = self.directed.iter().copied().collect();
        Dag::new(self.labels.clone(), &edges)
    }

    /// Structural Hamming distance: number of node pairs whose marks differ.
    pub fn shd(&self, other: &Cpdag) -> usize {
        let pairs: BTreeSet<(usize, usize)> = self.skeleton().union(&other.skeleton()).copied().collect();
        pairs.into_iter().filter(|&(a, b)| self.mark(a, b) != other.mark(a, b)).count()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph G {\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "  {i} [label=\"{l}\"];");
        }
        for &(a, b) in &self.directed {
            let _ = writeln!(s, "  {a} -> {b};");
        }
        for &(a, b) in &self.undirected {
            let _ = writeln!(s, "  {a} -> {b} [dir=none];");
        }
        s.push_str("}\n");
        s
    }
}

/// Apply Meek's rules R1-R4 until nothing changes.
pub fn meek_closure(g: &mut Cpdag) {
    loop {
        let mut changed = false;
        let und: Vec<(usize, usize)> = g.undirected.iter().copied().collect();
        for (x, y) in und {
            for (a, b) in [(x, y), (y, x)] {
                if g.is_undirected(a, b) && meek_orients(g, a, b) {
                    g.orient(a, b);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Whether some rule forces the undirected `a - b` into `a -> b`.
fn meek_orients(g: &Cpdag, a: usize, b: usize) -> bool {
    let n = g.n;
    // R1: c -> a - b, c and b not adjacent
    if (0..n).any(|c| g.is_directed(c, a) && !g.adjacent(c, b) && c != b) {
        return true;
    }
    // R2: a -> c -> b
    if (0..n).any(|c| g.is_directed(a, c) && g.is_directed(c, b)) {
        return true;
    }
    // R3: a - c -> b, a - d -> b, c and d not adjacent
    let cs: Vec<usize> = (0..n).filter(|&c| g.is_undirected(a, c) && g.is_directed(c, b)).collect();
    for (i, &c) in cs.iter().enumerate() {
        if cs[i + 1..].iter().any(|&d| !g.adjacent(c, d)) {
            return true;
        }
    }
    // R4: a - c -> d -> b, c and b not adjacent, a adjacent to d
    for c in (0..n).filter(|&c| g.is_undirected(a, c)) {
        for d in (0..n).filter(|&d| g.is_directed(c, d) && g.is_directed(d, b)) {
            if !g.adjacent(c, b) && g.adjacent(a, d) {
                return true;
            }
        }
    }
    false
}

/// Orient `a -> c <- b` for every non-adjacent `a, b` with common child `c` in `dag`.
fn v_structures(dag: &Dag, g: &mut Cpdag) {
    for c in 0..dag.n() {
        let ps = dag.parents(c);
        for (i, &a) in ps.iter().enumerate() {
            for &b in &ps[i + 1..] {
                if !dag.adjacent(a, b) {
                    g.orient(a, c);
                    g.orient(b, c);
                }
            }
        }
    }
}

/// Completed partially directed graph of the Markov equivalence class of `dag`.
pub fn cpdag_of(dag: &Dag) -> Cpdag {
    let mut g = Cpdag::skeleton_of(dag);
    v_structures(dag, &mut g);
    meek_closure(&mut g);
    g
}

/// Equivalence class of `dag` refined by the knowledge that `leaves` have no children:
/// every edge at a leaf points into it, then orientations propagate.
pub fn cpdag_with_known_leaves(dag: &Dag, leaves: &[usize]) -> Cpdag {
    let mut g = cpdag_of(dag);
    for &l in leaves {
        for nb in g.neighbors(l) {
            if g.is_undirected(nb, l) {
                g.orient(nb, l);
            }
        }
    }
    meek_closure(&mut g);
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collider_is_compelled() {
        let dag = Dag::with_default_labels(3, &[(0, 1), (2, 1)]).unwrap();
        let g = cpdag_of(&dag);
        assert!(g.is_fully_directed());
        assert_eq!(g.to_dag().unwrap(), dag);
    }

    #[test]
    fn single_edge_is_undirected() {
        let g = cpdag_of(&Dag::with_default_labels(2, &[(0, 1)]).unwrap());
        assert_eq!(g.mark(0, 1), EdgeMark::Undirected);
    }

    #[test]
    fn r1_propagates_below_collider() {
        let dag = Dag::with_default_labels(4, &[(0, 2), (1, 2), (2, 3)]).unwrap();
        let g = cpdag_of(&dag);
        assert!(g.is_directed(2, 3));
    }

    #[test]
    fn shd_counts_pairs() {
        let a = cpdag_of(&Dag::with_default_labels(3, &[(0, 1), (2, 1)]).unwrap());
        let b = cpdag_of(&Dag::with_default_labels(3, &[(0, 1), (1, 2)]).unwrap());
        assert_eq!(a.shd(&b), 2);
        assert_eq!(a.shd(&a), 0);
        assert_eq!(a.shd(&Cpdag::empty(3)), 2);
    }

    #[test]
    fn known_leaves_orient_a_chain() {
        let dag = Dag::with_default_labels(3, &[(0, 1), (1, 2)]).unwrap();
        let g = cpdag_with_known_leaves(&dag, &[2]);
        assert!(g.is_directed(1, 2));
        assert!(g.is_undirected(0, 1));
    }
}
