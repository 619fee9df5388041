//! Shortest-path Gaussian kernel features over the MDP state space.

use std::collections::VecDeque;

use crate::grid::GridWorld;
use crate::mdp::{LabeledMdp, State};

/// BFS hop counts from `source` over `graph`, never entering `blocked` nodes.
/// `None` marks unreachable nodes (and every blocked node other than the source).
pub fn shortest_path_lengths(graph: &[Vec<State>], blocked: &[bool], source: State) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have a distance");
        for &v in &graph[u] {
            if dist[v].is_none() && !blocked[v] {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Features `φ_j(s) = exp(−SP(s, c_j)² / 2σ²)` for a fixed list of centers,
/// with `SP` the hop distance in the move graph. Unreachable pairs give 0.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    centers: Vec<State>,
    sigma: f64,
    /// `table[s][j] = φ_j(s)`.
    table: Vec<Vec<f64>>,
}

impl KernelBasis {
    /// `centers` must be distinct states; `blocked` states are never traversed.
    pub fn new(m: &LabeledMdp, blocked: &[bool], centers: Vec<State>, sigma: f64) -> Self {
        assert!(sigma > 0.0, "kernel width must be positive");
        assert_eq!(blocked.len(), m.n_states());
        let graph = m.move_graph();
        // the move graph is directed; distances are measured from s to the center
        let mut rev = vec![Vec::new(); graph.len()];
        for (u, vs) in graph.iter().enumerate() {
            for &v in vs {
                if v != u {
                    rev[v].push(u);
                }
            }
        }
        let mut table = vec![vec![0.0; centers.len()]; m.n_states()];
        for (j, &c) in centers.iter().enumerate() {
            for (s, d) in shortest_path_lengths(&rev, blocked, c).into_iter().enumerate() {
                if let Some(d) = d {
                    let d = d as f64;
                    table[s][j] = (-d * d / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        Self { centers, sigma, table }
    }

    /// Centers on every free cell whose coordinates are multiples of `interval`.
    pub fn grid(world: &GridWorld, interval: usize, sigma: f64) -> Self {
        assert!(interval > 0, "center interval must be positive");
        let blocked: Vec<bool> = (0..world.mdp().n_states()).map(|s| world.is_obstacle(s)).collect();
        let centers = (0..world.mdp().n_states())
            .filter(|&s| {
                let c = world.cell_of(s);
                !blocked[s] && c.x.is_multiple_of(interval) && c.y.is_multiple_of(interval)
            })
            .collect();
        Self::new(world.mdp(), &blocked, centers, sigma)
    }

    pub fn n_features(&self) -> usize {
        self.centers.len()
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn centers(&self) -> &[State] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn features(&self, s: State) -> &[f64] {
        &self.table[s]
    }
}

/// Feature vector of MDP state `s`.
pub fn kernel_feature(basis: &KernelBasis, s: State) -> Vec<f64> {
    basis.features(s).to_vec()
}
