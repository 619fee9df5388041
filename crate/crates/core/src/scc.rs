//! Directed graphs and Kosaraju's strongly connected components.

use std::collections::BTreeSet;

/// Adjacency-list digraph over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiGraph {
    adj: Vec<Vec<usize>>,
}

impl DiGraph {
    pub fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::new(n);
        for &(u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    /// Adds `u → v`; duplicates are ignored.
    pub fn add_edge(&mut self, u: usize, v: usize) {
        assert!(u < self.adj.len() && v < self.adj.len(), "edge endpoint out of range");
        if !self.adj[u].contains(&v) {
            self.adj[u].push(v);
            self.adj[u].sort_unstable();
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn successors(&self, u: usize) -> &[usize] {
        &self.adj[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
            .collect()
    }

    pub fn reversed(&self) -> DiGraph {
        let mut r = DiGraph::new(self.n_nodes());
        for (u, v) in self.edges() {
            r.adj[v].push(u);
        }
        for row in &mut r.adj {
            row.sort_unstable();
        }
        r
    }

    /// Nodes reachable from `root` (including it).
    pub fn reachable_from(&self, root: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_nodes()];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Subgraph induced by `keep`, with the same node numbering.
    pub fn induced(&self, keep: &[bool]) -> DiGraph {
        let mut g = DiGraph::new(self.n_nodes());
        for (u, v) in self.edges() {
            if keep[u] && keep[v] {
                g.adj[u].push(v);
            }
        }
        g
    }
}

/// Parses `from to` lines (`#` comments allowed). Nodes are numbered in order
/// of first appearance; their names are returned alongside the graph.
pub fn parse_edge_list(text: &str) -> Result<(DiGraph, Vec<String>), String> {
    let mut names: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    let id = |name: &str, names: &mut Vec<String>| match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    };
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            [u, v] => {
                let u = id(u, &mut names);
                let v = id(v, &mut names);
                edges.push((u, v));
            }
            _ => return Err(format!("line {}: expected `from to`", k + 1)),
        }
    }
    Ok((DiGraph::from_edges(names.len(), &edges), names))
}

/// Result of an SCC decomposition.
///
/// `id[v]` is in `1..=count`; ids follow a topological order of the
/// condensation with sources getting the largest ids, so every edge between
/// different components goes from a larger id to a smaller one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scc {
    pub count: usize,
    pub id: Vec<usize>,
}

impl Scc {
    /// Members of each component; index `k` holds the nodes with id `k + 1`.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (v, &c) in self.id.iter().enumerate() {
            out[c - 1].push(v);
        }
        out
    }

    /// Condensation graph over component indices (`id − 1`).
    pub fn condensation(&self, g: &DiGraph) -> DiGraph {
        let mut c = DiGraph::new(self.count);
        for (u, v) in g.edges() {
            let (cu, cv) = (self.id[u] - 1, self.id[v] - 1);
            if cu != cv {
                c.add_edge(cu, cv);
            }
        }
        c
    }
}

/// Iterative post-order DFS over all nodes in index order.
fn finish_order(g: &DiGraph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(top) = stack.last_mut() {
            let (u, next) = *top;
            if let Some(&v) = g.successors(u).get(next) {
                top.1 += 1;
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
                stack.pop();
            }
        }
    }
    order
}

/// Kosaraju's two-pass algorithm.
pub fn kosaraju_scc(g: &DiGraph) -> Scc {
    let n = g.n_nodes();
    let order = finish_order(g);
    let rev = g.reversed();
    let mut comp = vec![usize::MAX; n];
    let mut found = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = found;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &v in rev.successors(u) {
                if comp[v] == usize::MAX {
                    comp[v] = found;
                    stack.push(v);
                }
            }
        }
        found += 1;
    }
    // components come out sources first
    Scc {
        count: found,
        id: comp.into_iter().map(|c| found - c).collect(),
    }
}

/// Kosaraju restricted to the part of `g` reachable from `root`, the way a
/// planner that only builds the reachable automaton graph would number
/// components. Unreachable nodes form singleton-or-larger components of
/// their own but all share the lowest id, 1.
pub fn kosaraju_from_root(g: &DiGraph, root: usize) -> Scc {
    let keep = g.reachable_from(root);
    let sub = g.induced(&keep);
    let local = kosaraju_scc(&sub);
    // unreachable nodes are isolated in `sub`; drop their components and renumber
    let kept: BTreeSet<usize> = (0..g.n_nodes()).filter(|&v| keep[v]).map(|v| local.id[v]).collect();
    let rank: Vec<usize> = {
        let mut r = vec![0; local.count + 1];
        for (k, &c) in kept.iter().enumerate() {
            r[c] = k + 1;
        }
        r
    };
    let id = (0..g.n_nodes())
        .map(|v| if keep[v] { rank[local.id[v]] } else { 1 })
        .collect();
    Scc { count: kept.len(), id }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closure(g: &DiGraph) -> Vec<Vec<bool>> {
        (0..g.n_nodes()).map(|u| g.reachable_from(u)).collect()
    }

    #[test]
    fn single_node() {
        let s = kosaraju_scc(&DiGraph::new(1));
        assert_eq!(s.count, 1);
        assert_eq!(s.id, vec![1]);
    }

    #[test]
    fn cycle_with_tail() {
        // 0 → 1 → 2 → 0, 3 → 0
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 2), (2, 0), (3, 0)]);
        let s = kosaraju_scc(&g);
        assert_eq!(s.count, 2);
        assert_eq!(s.id[0], s.id[1]);
        assert_eq!(s.id[1], s.id[2]);
        assert!(s.id[3] > s.id[0]);
    }

    #[test]
    fn ids_decrease_along_edges() {
        let g = DiGraph::from_edges(6, &[(0, 1), (1, 0), (1, 2), (3, 2), (2, 4), (4, 5), (5, 4)]);
        let s = kosaraju_scc(&g);
        let reach = closure(&g);
        for (u, v) in g.edges() {
            assert!(s.id[u] >= s.id[v]);
        }
        for u in 0..6 {
            for v in 0..6 {
                assert_eq!(s.id[u] == s.id[v], reach[u][v] && reach[v][u]);
            }
        }
    }

    #[test]
    fn root_restricted_numbering() {
        // 0 ⇄ 1 → 2, 3 → 2 (3 unreachable from 0)
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 0), (1, 2), (3, 2)]);
        let s = kosaraju_from_root(&g, 0);
        assert_eq!(s.count, 2);
        assert_eq!(s.id, vec![2, 2, 1, 1]);
    }

    #[test]
    fn edge_list_parsing() {
        let (g, names) = parse_edge_list("# c\nx y\ny x\n\nz x\n").unwrap();
        assert_eq!(names, ["x", "y", "z"]);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0) && g.has_edge(2, 0));
        assert!(parse_edge_list("x y z").is_err());
    }

    #[test]
    fn condensation_is_acyclic_and_ordered() {
        let g = DiGraph::from_edges(5, &[(0, 1), (1, 2), (2, 1), (2, 3), (4, 3)]);
        let s = kosaraju_scc(&g);
        let c = s.condensation(&g);
        for (u, v) in c.edges() {
            assert!(u > v);
        }
        assert_eq!(s.components().iter().map(Vec::len).sum::<usize>(), 5);
    }
}
