use super::dag::Dag;

/// d-separation of `i` and `j` given `s`, by the reachability ("Bayes ball") pass.
///
/// A trail is tracked as `(node, arrived_from_child)`. Colliders pass only when
/// they or one of their descendants are in `s`.
pub fn d_separated(dag: &Dag, i: usize, j: usize, s: &[usize]) -> bool {
    let n = dag.n();
    let mut in_s = vec![false; n];
    for &v in s {
        in_s[v] = true;
    }
    // nodes with a descendant (or themselves) in s
    let mut anc = vec![false; n];
    let mut stack: Vec<usize> = s.to_vec();
    while let Some(v) = stack.pop() {
        if !anc[v] {
            anc[v] = true;
            stack.extend_from_slice(dag.parents(v));
        }
    }

    let mut visited = vec![[false; 2]; n];
    // 0: arrived from a child (moving up), 1: arrived from a parent (moving down)
    let mut queue = vec![(i, 0usize)];
    while let Some((v, dir)) = queue.pop() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        if v == j && !in_s[v] {
            return false;
        }
        if dir == 0 {
            if !in_s[v] {
                queue.extend(dag.parents(v).iter().map(|&p| (p, 0)));
                queue.extend(dag.children(v).iter().map(|&c| (c, 1)));
            }
        } else {
            if !in_s[v] {
                queue.extend(dag.children(v).iter().map(|&c| (c, 1)));
            }
            if anc[v] {
                queue.extend(dag.parents(v).iter().map(|&p| (p, 0)));
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fork_is_blocked_by_its_middle() {
        let dag = Dag::with_default_labels(3, &[(1, 0), (1, 2)]).unwrap();
        assert!(d_separated(&dag, 0, 2, &[1]));
        assert!(!d_separated(&dag, 0, 2, &[]));
    }

    #[test]
    fn collider_opens_when_conditioned() {
        let dag = Dag::with_default_labels(3, &[(0, 1), (2, 1)]).unwrap();
        assert!(d_separated(&dag, 0, 2, &[]));
        assert!(!d_separated(&dag, 0, 2, &[1]));
    }

    #[test]
    fn descendant_of_collider_opens_it() {
        let dag = Dag::with_default_labels(4, &[(0, 1), (2, 1), (1, 3)]).unwrap();
        assert!(!d_separated(&dag, 0, 2, &[3]));
    }
}
