//! Guard and invariant sets, the mode dependency graph, meta-modes and level
//! sets.
//!
//! A mode `q` depends on `q'` when some MDP state can trigger `q → q'` in one
//! stochastic step. Meta-modes are the strongly connected components of that
//! graph; level sets layer them outward from the accepting modes so that
//! solving level 0 first, then level 1 and so on, never needs a value that
//! is not final yet.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::automaton::{DfaError, Mode, Symbol, TaskDfa};
use crate::mdp::{LabeledMdp, State};
use crate::scc::{kosaraju_scc, DiGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("mode index {0} out of range")]
    UnknownMode(Mode),
    #[error("initial mode {0} cannot reach an accepting mode in this MDP; the task is unsatisfiable")]
    Unsatisfiable(String),
    #[error(transparent)]
    Dfa(#[from] DfaError),
}

/// How the mode dependency graph is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum DependencyMode {
    /// `q → q'` iff `Guard(q, q')` is nonempty over the given MDP.
    #[default]
    MdpAware,
    /// `q → q'` iff some symbol moves `q` to `q'`, ignoring the MDP.
    AutomatonOnly,
}

/// How a meta-mode that depends on several levels is assigned a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum LevelRule {
    /// One more than the highest level among its successors, so every
    /// dependency points strictly downward.
    #[default]
    LongestPath,
    /// First level `i` at which it has an edge into `L_{i-1}`. Can place a
    /// meta-mode below one of its own successors.
    SmallestAdmissible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecomposeOptions {
    pub dependency: DependencyMode,
    pub level_rule: LevelRule,
}

fn check_mode(dfa: &TaskDfa, q: Mode) -> Result<(), DecompositionError> {
    if q >= dfa.n_modes() {
        Err(DecompositionError::UnknownMode(q))
    } else {
        Ok(())
    }
}

fn symbols(m: &LabeledMdp, dfa: &TaskDfa) -> Vec<Symbol> {
    (0..m.n_states()).map(|s| dfa.project(m.label(s))).collect()
}

/// States from which some action can move the automaton from `q` to `q2`.
pub fn guard_set(
    m: &LabeledMdp,
    dfa: &TaskDfa,
    q: Mode,
    q2: Mode,
) -> Result<BTreeSet<State>, DecompositionError> {
    check_mode(dfa, q)?;
    check_mode(dfa, q2)?;
    let sym = symbols(m, dfa);
    let mut out = BTreeSet::new();
    for s in 0..m.n_states() {
        'actions: for a in m.available_actions(s) {
            for s2 in m.transition(s, a).expect("available").support() {
                if dfa.step_symbol(q, sym[s2])? == q2 {
                    out.insert(s);
                    break 'actions;
                }
            }
        }
    }
    Ok(out)
}

/// States from which every action keeps the automaton in `q` with probability one.
pub fn invariant_set(
    m: &LabeledMdp,
    dfa: &TaskDfa,
    q: Mode,
) -> Result<BTreeSet<State>, DecompositionError> {
    check_mode(dfa, q)?;
    let sym = symbols(m, dfa);
    let mut out = BTreeSet::new();
    for s in 0..m.n_states() {
        let mut stays = true;
        'actions: for a in m.available_actions(s) {
            for s2 in m.transition(s, a).expect("available").support() {
                if dfa.step_symbol(q, sym[s2])? != q {
                    stays = false;
                    break 'actions;
                }
            }
        }
        if stays {
            out.insert(s);
        }
    }
    Ok(out)
}

/// All nonempty guard sets and every invariant set, from one pass over `(s, a, s')`.
pub fn guards_and_invariants(
    m: &LabeledMdp,
    dfa: &TaskDfa,
) -> Result<(BTreeMap<(Mode, Mode), BTreeSet<State>>, Vec<BTreeSet<State>>), DecompositionError> {
    let sym = symbols(m, dfa);
    let mut guards: BTreeMap<(Mode, Mode), BTreeSet<State>> = BTreeMap::new();
    let mut inv = vec![BTreeSet::new(); dfa.n_modes()];
    for q in 0..dfa.n_modes() {
        for s in 0..m.n_states() {
            let mut stays = true;
            for a in m.available_actions(s) {
                for s2 in m.transition(s, a).expect("available").support() {
                    let q2 = dfa.step_symbol(q, sym[s2])?;
                    if q2 != q {
                        stays = false;
                        guards.entry((q, q2)).or_default().insert(s);
                    }
                }
            }
            if stays {
                inv[q].insert(s);
            }
        }
    }
    Ok((guards, inv))
}

/// Mode dependency graph: `q → q'` (`q ≠ q'`) iff `Guard(q, q')` is nonempty.
pub fn mode_dependency_graph(m: &LabeledMdp, dfa: &TaskDfa) -> Result<DiGraph, DecompositionError> {
    let (guards, _) = guards_and_invariants(m, dfa)?;
    let mut g = DiGraph::new(dfa.n_modes());
    for &(q, q2) in guards.keys() {
        g.add_edge(q, q2);
    }
    Ok(g)
}

/// Automaton-only dependency graph: `q → q'` iff some symbol leads there.
pub fn automaton_graph(dfa: &TaskDfa) -> DiGraph {
    let mut g = DiGraph::new(dfa.n_modes());
    for q in 0..dfa.n_modes() {
        for q2 in dfa.successors(q) {
            g.add_edge(q, q2);
        }
    }
    g
}

/// Assigns levels to meta-modes. `deps` is the condensation over meta-mode
/// indices; `accepting[x]` marks meta-modes containing an accepting mode.
/// Returns the level of each meta-mode (`None` when it cannot reach level 0).
pub fn level_sets(deps: &DiGraph, accepting: &[bool], rule: LevelRule) -> Vec<Option<usize>> {
    let n = deps.n_nodes();
    let mut level: Vec<Option<usize>> = (0..n).map(|x| accepting[x].then_some(0)).collect();
    match rule {
        LevelRule::SmallestAdmissible => {
            let mut current: Vec<usize> = (0..n).filter(|&x| accepting[x]).collect();
            let mut i = 0;
            while !current.is_empty() {
                i += 1;
                let next: Vec<usize> = (0..n)
                    .filter(|&x| level[x].is_none())
                    .filter(|&x| deps.successors(x).iter().any(|y| current.contains(y)))
                    .collect();
                for &x in &next {
                    level[x] = Some(i);
                }
                current = next;
            }
        }
        LevelRule::LongestPath => {
            let rev = deps.reversed();
            let mut co = accepting.to_vec();
            let mut stack: Vec<usize> = (0..n).filter(|&x| accepting[x]).collect();
            while let Some(y) = stack.pop() {
                for &x in rev.successors(y) {
                    if !co[x] {
                        co[x] = true;
                        stack.push(x);
                    }
                }
            }
            // condensation is acyclic: resolve by repeated relaxation in dependency order
            fn visit(x: usize, deps: &DiGraph, co: &[bool], level: &mut [Option<usize>]) -> usize {
                if let Some(l) = level[x] {
                    return l;
                }
                let mut best = 0;
                for &y in deps.successors(x) {
                    if co[y] {
                        best = best.max(visit(y, deps, co, level) + 1);
                    }
                }
                level[x] = Some(best);
                best
            }
            for x in 0..n {
                if co[x] {
                    visit(x, deps, &co, &mut level);
                }
            }
        }
    }
    level
}

/// The full decomposition of a task over an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub mode_names: Vec<String>,
    pub accepting: Vec<bool>,
    /// Meta-modes over the automaton-coaccessible modes, each sorted, ordered
    /// by their smallest mode.
    pub meta_modes: Vec<Vec<Mode>>,
    pub meta_of: Vec<Option<usize>>,
    /// `levels[i]` lists the meta-modes in level `i`.
    pub levels: Vec<Vec<usize>>,
    pub level_of_meta: Vec<Option<usize>>,
    /// Modes that cannot reach an accepting mode, in index order.
    pub dropped_modes: Vec<Mode>,
    /// Dependency edges used (edges out of accepting modes are omitted).
    pub dependency: DiGraph,
    pub meta_dependency: DiGraph,
    /// Nonempty guard sets `Guard(q, q')`.
    pub guards: BTreeMap<(Mode, Mode), BTreeSet<State>>,
    /// `Inv(q)` for every mode.
    pub invariants: Vec<BTreeSet<State>>,
    pub options: DecomposeOptions,
}

pub fn decompose(m: &LabeledMdp, dfa: &TaskDfa) -> Result<Decomposition, DecompositionError> {
    decompose_with(m, dfa, DecomposeOptions::default())
}

pub fn decompose_with(
    m: &LabeledMdp,
    dfa: &TaskDfa,
    opts: DecomposeOptions,
) -> Result<Decomposition, DecompositionError> {
    let n_q = dfa.n_modes();
    let alive = dfa.coaccessible();
    if !alive[dfa.initial()] {
        return Err(DecompositionError::Unsatisfiable(dfa.mode_name(dfa.initial()).to_string()));
    }
    let (guards, invariants) = guards_and_invariants(m, dfa)?;
    let raw = match opts.dependency {
        DependencyMode::MdpAware => {
            let mut g = DiGraph::new(n_q);
            for &(q, q2) in guards.keys() {
                g.add_edge(q, q2);
            }
            g
        }
        DependencyMode::AutomatonOnly => automaton_graph(dfa),
    };
    // accepting product states are absorbing, so nothing leaves an accepting mode
    let mut dependency = DiGraph::new(n_q);
    for (q, q2) in raw.edges() {
        if alive[q] && alive[q2] && !dfa.is_accepting(q) {
            dependency.add_edge(q, q2);
        }
    }

    let scc = kosaraju_scc(&dependency);
    let mut groups: BTreeMap<usize, Vec<Mode>> = BTreeMap::new();
    for q in (0..n_q).filter(|&q| alive[q]) {
        groups.entry(scc.id[q]).or_default().push(q);
    }
    let mut meta_modes: Vec<Vec<Mode>> = groups.into_values().collect();
    meta_modes.sort_by_key(|x| x[0]);
    let mut meta_of = vec![None; n_q];
    for (x, modes) in meta_modes.iter().enumerate() {
        for &q in modes {
            meta_of[q] = Some(x);
        }
    }
    let mut meta_dependency = DiGraph::new(meta_modes.len());
    for (q, q2) in dependency.edges() {
        let (x, y) = (meta_of[q].unwrap(), meta_of[q2].unwrap());
        if x != y {
            meta_dependency.add_edge(x, y);
        }
    }
    let meta_accepting: Vec<bool> = meta_modes
        .iter()
        .map(|x| x.iter().any(|&q| dfa.is_accepting(q)))
        .collect();
    let level_of_meta = level_sets(&meta_dependency, &meta_accepting, opts.level_rule);
    let n_levels = level_of_meta.iter().flatten().map(|l| l + 1).max().unwrap_or(0);
    let mut levels = vec![Vec::new(); n_levels];
    for (x, l) in level_of_meta.iter().enumerate() {
        if let Some(l) = l {
            levels[*l].push(x);
        }
    }
    let dropped_modes: Vec<Mode> = (0..n_q)
        .filter(|&q| meta_of[q].and_then(|x| level_of_meta[x]).is_none())
        .collect();
    if dropped_modes.contains(&dfa.initial()) {
        return Err(DecompositionError::Unsatisfiable(dfa.mode_name(dfa.initial()).to_string()));
    }
    Ok(Decomposition {
        mode_names: dfa.mode_names().to_vec(),
        accepting: (0..n_q).map(|q| dfa.is_accepting(q)).collect(),
        meta_modes,
        meta_of,
        levels,
        level_of_meta,
        dropped_modes,
        dependency,
        meta_dependency,
        guards,
        invariants,
        options: opts,
    })
}

impl Decomposition {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_of_mode(&self, q: Mode) -> Option<usize> {
        self.meta_of[q].and_then(|x| self.level_of_meta[x])
    }

    /// Modes of level `i`, sorted.
    pub fn modes_in_level(&self, i: usize) -> Vec<Mode> {
        let mut out: Vec<Mode> = self.levels[i]
            .iter()
            .flat_map(|&x| self.meta_modes[x].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// `Guard(q, q')`, empty when absent.
    pub fn guard(&self, q: Mode, q2: Mode) -> BTreeSet<State> {
        self.guards.get(&(q, q2)).cloned().unwrap_or_default()
    }

    /// `Guard(X, X') = ⋃ Guard(q, q')` over `q ∈ X`, `q' ∈ X'`.
    pub fn meta_guard(&self, x: usize, y: usize) -> BTreeSet<State> {
        let mut out = BTreeSet::new();
        for &q in &self.meta_modes[x] {
            for &q2 in &self.meta_modes[y] {
                out.extend(self.guard(q, q2));
            }
        }
        out
    }

    /// `Inv(X) = ⋃ Inv(q)` over `q ∈ X`.
    pub fn meta_invariant(&self, x: usize) -> BTreeSet<State> {
        self.meta_modes[x]
            .iter()
            .flat_map(|&q| self.invariants[q].iter().copied())
            .collect()
    }

    /// MDP states constrained when solving meta-mode `x`:
    /// `Inv(X) ∪ ⋃_{X'} Guard(X, X')`, where `X'` ranges over every mode
    /// (including those of `X` itself and dropped ones).
    pub fn constraint_states(&self, x: usize) -> BTreeSet<State> {
        let mut out = self.meta_invariant(x);
        for &q in &self.meta_modes[x] {
            for ((from, _), set) in self.guards.range((q, 0)..(q + 1, 0)) {
                debug_assert_eq!(*from, q);
                out.extend(set.iter().copied());
            }
        }
        out
    }

    /// Dependency edges `X → X'` between leveled meta-modes whose target does
    /// not sit strictly below the source. Empty iff the backup order is safe.
    pub fn order_violations(&self) -> Vec<(usize, usize)> {
        self.meta_dependency
            .edges()
            .into_iter()
            .filter(|&(x, y)| match (self.level_of_meta[x], self.level_of_meta[y]) {
                (Some(lx), Some(ly)) => ly >= lx,
                _ => false,
            })
            .collect()
    }

    /// Level, meta-mode and dropped-mode summary using mode names.
    pub fn to_json(&self) -> serde_json::Value {
        let name = |q: &Mode| self.mode_names[*q].clone();
        let meta: Vec<Vec<String>> = self.meta_modes.iter().map(|x| x.iter().map(name).collect()).collect();
        let levels: Vec<Vec<Vec<String>>> = self
            .levels
            .iter()
            .map(|l| l.iter().map(|&x| meta[x].clone()).collect())
            .collect();
        let edges: Vec<[String; 2]> = self
            .dependency
            .edges()
            .iter()
            .map(|(q, q2)| [name(q), name(q2)])
            .collect();
        serde_json::json!({
            "meta_modes": meta,
            "levels": levels,
            "dropped_modes": self.dropped_modes.iter().map(name).collect::<Vec<_>>(),
            "dependency_edges": edges,
            "options": {
                "dependency": self.options.dependency,
                "level_rule": self.options.level_rule,
            },
        })
    }

    /// Graphviz rendering of the meta-mode condensation, clustered by level.
    pub fn to_dot(&self) -> String {
        let label = |x: usize| {
            let names: Vec<&str> = self.meta_modes[x].iter().map(|&q| self.mode_names[q].as_str()).collect();
            format!("{{{}}}", names.join(","))
        };
        let mut out = String::from("digraph meta_modes {\n  rankdir=LR;\n");
        for (i, level) in self.levels.iter().enumerate() {
            writeln!(out, "  subgraph cluster_L{i} {{\n    label=\"L{i}\";").unwrap();
            for &x in level {
                writeln!(out, "    X{x} [label=\"{}\"];", label(x)).unwrap();
            }
            out.push_str("  }\n");
        }
        for x in 0..self.meta_modes.len() {
            if self.level_of_meta[x].is_none() {
                writeln!(out, "  X{x} [label=\"{}\", style=dashed];", label(x)).unwrap();
            }
        }
        for (x, y) in self.meta_dependency.edges() {
            writeln!(out, "  X{x} -> X{y};").unwrap();
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::parse_dfa;
    use crate::mdp::parse_mdp;

    /// Three states in a row; `a` at s1, `goal` at s2.
    fn line_world() -> LabeledMdp {
        parse_mdp(
            "states: s0 s1 s2\nactions: r l\ninitial: s0\nprops: a goal\n\
             label: s1 a\nlabel: s2 goal\n\
             s0 r: s1=1\ns0 l: s0=1\ns1 r: s2=1\ns1 l: s0=1\ns2 r: s2=1\ns2 l: s1=1\n",
        )
        .unwrap()
    }

    fn seq_dfa() -> TaskDfa {
        parse_dfa(
            "props: a goal\nstates: q0 q1 q2\ninitial: q0\naccepting: q2\ndefault: self-loop\n\
             q0 --[a]--> q1\nq1 --[goal]--> q2\n",
        )
        .unwrap()
    }

    #[test]
    fn guard_and_invariant_sets() {
        let (m, d) = (line_world(), seq_dfa());
        assert_eq!(guard_set(&m, &d, 0, 1).unwrap(), BTreeSet::from([0, 2]));
        assert_eq!(guard_set(&m, &d, 0, 2).unwrap(), BTreeSet::new());
        assert_eq!(invariant_set(&m, &d, 0).unwrap(), BTreeSet::from([1]));
        assert_eq!(invariant_set(&m, &d, 2).unwrap().len(), 3);
        assert!(guard_set(&m, &d, 0, 7).is_err());
    }

    #[test]
    fn sequential_task_levels() {
        let d = decompose(&line_world(), &seq_dfa()).unwrap();
        assert_eq!(d.meta_modes, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(d.levels, vec![vec![2], vec![1], vec![0]]);
        assert!(d.dropped_modes.is_empty());
        assert!(d.order_violations().is_empty());
    }

    #[test]
    fn unreachable_region_drops_modes() {
        // `a` never occurs, so q1 is never entered and q0 cannot progress
        let m = parse_mdp("states: s0\nactions: x\ninitial: s0\nprops: a goal\ns0 x: s0=1\n").unwrap();
        assert!(matches!(
            decompose(&m, &seq_dfa()),
            Err(DecompositionError::Unsatisfiable(_))
        ));
        let d = decompose_with(
            &m,
            &seq_dfa(),
            DecomposeOptions {
                dependency: DependencyMode::AutomatonOnly,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(d.n_levels(), 3);
    }

    #[test]
    fn smallest_admissible_rule_can_break_the_order() {
        // X0 accepting; X1 → X0; X2 → X1; X3 → X0 and X3 → X2
        let g = DiGraph::from_edges(4, &[(1, 0), (2, 1), (3, 0), (3, 2)]);
        let acc = [true, false, false, false];
        let smallest = level_sets(&g, &acc, LevelRule::SmallestAdmissible);
        assert_eq!(smallest, vec![Some(0), Some(1), Some(2), Some(1)]);
        let longest = level_sets(&g, &acc, LevelRule::LongestPath);
        assert_eq!(longest, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn json_and_dot_mention_modes() {
        let d = decompose(&line_world(), &seq_dfa()).unwrap();
        let j = d.to_json();
        assert_eq!(j["levels"][0][0][0], "q2");
        assert!(d.to_dot().contains("X1 -> X2"));
    }
}
