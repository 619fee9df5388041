//! Task automata: deterministic finite automata whose alphabet is the power
//! set of a small set of atomic propositions.
//!
//! Symbols are stored as bitmasks over the automaton's sorted proposition
//! list, so `δ` is a dense `modes × 2^|AP|` table.

mod format;
pub mod guard;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::parse_dfa;

/// Largest proposition set for which `2^AP` is enumerated.
pub const MAX_PROPS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DfaError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error reading {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("mode {mode}: guards overlap on symbol {symbol} (targets {first} and {second})")]
    Nondeterministic {
        mode: String,
        symbol: PropSet,
        first: String,
        second: String,
    },
    #[error("mode {mode}: no transition for symbol {symbol} and no default rule")]
    NotTotal { mode: String, symbol: PropSet },
    #[error("unknown proposition {0:?}")]
    UnknownProp(String),
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("mode index {0} out of range")]
    ModeOutOfRange(usize),
    #[error("transition from {mode} on {symbol} leads to a trimmed mode")]
    Dangling { mode: String, symbol: PropSet },
    #[error("initial mode {0} cannot reach an accepting mode; the task is unsatisfiable")]
    Unsatisfiable(String),
    #[error("invalid automaton: {0}")]
    Invalid(String),
}

/// An ordered set of atomic proposition identifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropSet(BTreeSet<String>);

impl PropSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prop: impl Into<String>) -> bool {
        self.0.insert(prop.into())
    }

    pub fn contains(&self, prop: &str) -> bool {
        self.0.contains(prop)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn is_subset(&self, other: &PropSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn union(&self, other: &PropSet) -> PropSet {
        PropSet(self.0.union(&other.0).cloned().collect())
    }
}

impl<S: Into<String>> FromIterator<S> for PropSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        PropSet(iter.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for PropSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

/// A letter of `2^AP`, encoded as a bitmask over the automaton's sorted props.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(pub u32);

/// Index of a mode (automaton state) within a [`TaskDfa`].
pub type Mode = usize;

/// What [`TaskDfa::coaccessible_trim`] does with transitions into removed modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimPolicy {
    /// Leave them undefined and list them in [`TrimReport::dangling`].
    ReportDangling,
    /// Redirect them into a single non-accepting absorbing mode.
    RedirectToDead,
}

/// Name given to the absorbing mode added by [`TrimPolicy::RedirectToDead`].
pub const DEAD_MODE: &str = "__dead";

#[derive(Debug, Clone)]
pub struct TrimReport {
    pub dfa: TaskDfa,
    pub removed: Vec<String>,
    pub dangling: Vec<(String, PropSet)>,
}

/// Deterministic automaton over `2^AP`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDfa {
    props: Vec<String>,
    modes: Vec<String>,
    delta: Vec<Vec<Option<Mode>>>,
    initial: Mode,
    accepting: Vec<bool>,
}

impl TaskDfa {
    /// Builds an automaton from an explicit table. `delta[q][σ]` is indexed by
    /// the symbol bitmask over `props` sorted ascending.
    pub fn from_table(
        props: Vec<String>,
        modes: Vec<String>,
        delta: Vec<Vec<Mode>>,
        initial: Mode,
        accepting: Vec<Mode>,
    ) -> Result<Self, DfaError> {
        let delta = delta
            .into_iter()
            .map(|row| row.into_iter().map(Some).collect())
            .collect();
        Self::from_partial_table(props, modes, delta, initial, accepting, true)
    }

    pub(crate) fn from_partial_table(
        mut props: Vec<String>,
        modes: Vec<String>,
        delta: Vec<Vec<Option<Mode>>>,
        initial: Mode,
        accepting: Vec<Mode>,
        require_total: bool,
    ) -> Result<Self, DfaError> {
        let sorted = {
            let mut p = props.clone();
            p.sort();
            p.dedup();
            p
        };
        if sorted.len() != props.len() {
            return Err(DfaError::Invalid("duplicate proposition".into()));
        }
        if sorted != props {
            return Err(DfaError::Invalid("props must be sorted ascending".into()));
        }
        props = sorted;
        if props.len() > MAX_PROPS {
            return Err(DfaError::Invalid(format!(
                "at most {MAX_PROPS} propositions are supported"
            )));
        }
        if modes.is_empty() {
            return Err(DfaError::Invalid("no modes".into()));
        }
        let unique: BTreeSet<&String> = modes.iter().collect();
        if unique.len() != modes.len() {
            return Err(DfaError::Invalid("duplicate mode name".into()));
        }
        if initial >= modes.len() {
            return Err(DfaError::ModeOutOfRange(initial));
        }
        if accepting.is_empty() {
            return Err(DfaError::Invalid("accepting set is empty".into()));
        }
        let n_sym = 1usize << props.len();
        if delta.len() != modes.len() || delta.iter().any(|r| r.len() != n_sym) {
            return Err(DfaError::Invalid("transition table has wrong shape".into()));
        }
        let mut acc = vec![false; modes.len()];
        for &q in &accepting {
            if q >= modes.len() {
                return Err(DfaError::ModeOutOfRange(q));
            }
            acc[q] = true;
        }
        for (q, row) in delta.iter().enumerate() {
            for (sym, t) in row.iter().enumerate() {
                match t {
                    Some(t) if *t >= modes.len() => return Err(DfaError::ModeOutOfRange(*t)),
                    None if require_total => {
                        return Err(DfaError::NotTotal {
                            mode: modes[q].clone(),
                            symbol: symbol_props(&props, Symbol(sym as u32)),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            props,
            modes,
            delta,
            initial,
            accepting: acc,
        })
    }

    /// Reads and validates an automaton file (see [`parse_dfa`] for the format).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DfaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DfaError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        parse_dfa(&text)
    }

    pub fn props(&self) -> &[String] {
        &self.props
    }

    pub fn prop_set(&self) -> PropSet {
        self.props.iter().cloned().collect()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_symbols(&self) -> usize {
        1 << self.props.len()
    }

    pub fn mode_name(&self, q: Mode) -> &str {
        &self.modes[q]
    }

    pub fn mode_names(&self) -> &[String] {
        &self.modes
    }

    pub fn mode_index(&self, name: &str) -> Result<Mode, DfaError> {
        self.modes
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| DfaError::UnknownMode(name.to_string()))
    }

    pub fn initial(&self) -> Mode {
        self.initial
    }

    pub fn is_accepting(&self, q: Mode) -> bool {
        self.accepting[q]
    }

    pub fn accepting(&self) -> Vec<Mode> {
        (0..self.n_modes()).filter(|&q| self.accepting[q]).collect()
    }

    /// True when every `(q, σ)` has a successor.
    pub fn is_total(&self) -> bool {
        self.delta.iter().all(|row| row.iter().all(Option::is_some))
    }

    /// Encodes a proposition set; every member must be one of the automaton's props.
    pub fn symbol(&self, set: &PropSet) -> Result<Symbol, DfaError> {
        let mut bits = 0u32;
        for p in set.iter() {
            let i = self
                .props
                .binary_search_by(|q| q.as_str().cmp(p))
                .map_err(|_| DfaError::UnknownProp(p.to_string()))?;
            bits |= 1 << i;
        }
        Ok(Symbol(bits))
    }

    /// Encodes the intersection of `set` with the automaton's props; other
    /// propositions are ignored. Used for MDP labels, which may carry extra props.
    pub fn project(&self, set: &PropSet) -> Symbol {
        let mut bits = 0u32;
        for (i, p) in self.props.iter().enumerate() {
            if set.contains(p) {
                bits |= 1 << i;
            }
        }
        Symbol(bits)
    }

    pub fn symbol_props(&self, sym: Symbol) -> PropSet {
        symbol_props(&self.props, sym)
    }

    /// `δ(q, σ)` on an encoded symbol.
    pub fn step_symbol(&self, q: Mode, sym: Symbol) -> Result<Mode, DfaError> {
        let row = self.delta.get(q).ok_or(DfaError::ModeOutOfRange(q))?;
        let cell = row
            .get(sym.0 as usize)
            .ok_or_else(|| DfaError::Invalid(format!("symbol {} out of range", sym.0)))?;
        cell.ok_or_else(|| DfaError::Dangling {
            mode: self.modes[q].clone(),
            symbol: self.symbol_props(sym),
        })
    }

    /// `δ(q, σ)` for a proposition set `σ ⊆ AP`.
    pub fn step(&self, q: Mode, symbol: &PropSet) -> Result<Mode, DfaError> {
        let sym = self.symbol(symbol)?;
        self.step_symbol(q, sym)
    }

    /// Runs a word from `from`. Returns the final mode and whether some prefix
    /// (including the empty one) visited an accepting mode.
    pub fn run_from(&self, from: Mode, word: &[PropSet]) -> Result<(Mode, bool), DfaError> {
        if from >= self.n_modes() {
            return Err(DfaError::ModeOutOfRange(from));
        }
        let mut q = from;
        let mut accepted = self.accepting[q];
        for letter in word {
            q = self.step(q, letter)?;
            accepted |= self.accepting[q];
        }
        Ok((q, accepted))
    }

    /// Runs a word from the initial mode.
    pub fn run_word(&self, word: &[PropSet]) -> Result<(Mode, bool), DfaError> {
        self.run_from(self.initial, word)
    }

    /// Distinct successors of `q` other than `q` itself.
    pub fn successors(&self, q: Mode) -> Vec<Mode> {
        let set: BTreeSet<Mode> = self.delta[q].iter().flatten().copied().filter(|&t| t != q).collect();
        set.into_iter().collect()
    }

    /// Modes from which an accepting mode is reachable in the transition graph.
    pub fn coaccessible(&self) -> Vec<bool> {
        let n = self.n_modes();
        let mut preds = vec![Vec::new(); n];
        for q in 0..n {
            for t in self.delta[q].iter().flatten() {
                preds[*t].push(q);
            }
        }
        let mut seen = self.accepting.clone();
        let mut queue: VecDeque<Mode> = (0..n).filter(|&q| seen[q]).collect();
        while let Some(q) = queue.pop_front() {
            for &p in &preds[q] {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(p);
                }
            }
        }
        seen
    }

    /// Restricts the automaton to coaccessible modes.
    pub fn coaccessible_trim(&self, policy: TrimPolicy) -> Result<TrimReport, DfaError> {
        let keep = self.coaccessible();
        if !keep[self.initial] {
            return Err(DfaError::Unsatisfiable(self.modes[self.initial].clone()));
        }
        let mut new_index = vec![None; self.n_modes()];
        let mut modes = Vec::new();
        let mut removed = Vec::new();
        for q in 0..self.n_modes() {
            if keep[q] {
                new_index[q] = Some(modes.len());
                modes.push(self.modes[q].clone());
            } else {
                removed.push(self.modes[q].clone());
            }
        }
        let dead = if policy == TrimPolicy::RedirectToDead && !removed.is_empty() {
            let mut name = DEAD_MODE.to_string();
            while modes.contains(&name) {
                name.push('_');
            }
            modes.push(name);
            Some(modes.len() - 1)
        } else {
            None
        };
        let mut dangling = Vec::new();
        let mut delta = Vec::with_capacity(modes.len());
        for q in (0..self.n_modes()).filter(|&q| keep[q]) {
            let row = self.delta[q]
                .iter()
                .enumerate()
                .map(|(sym, t)| match t.and_then(|t| new_index[t]) {
                    Some(t) => Some(t),
                    None => {
                        if dead.is_none() && t.is_some() {
                            dangling.push((
                                self.modes[q].clone(),
                                self.symbol_props(Symbol(sym as u32)),
                            ));
                        }
                        dead
                    }
                })
                .collect();
            delta.push(row);
        }
        if let Some(d) = dead {
            delta.push(vec![Some(d); self.n_symbols()]);
        }
        let accepting = (0..self.n_modes())
            .filter(|&q| self.accepting[q])
            .filter_map(|q| new_index[q])
            .collect();
        let dfa = TaskDfa::from_partial_table(
            self.props.clone(),
            modes,
            delta,
            new_index[self.initial].expect("initial is coaccessible"),
            accepting,
            false,
        )?;
        Ok(TrimReport {
            dfa,
            removed,
            dangling,
        })
    }
}

fn symbol_props(props: &[String], sym: Symbol) -> PropSet {
    props
        .iter()
        .enumerate()
        .filter(|(i, _)| sym.0 & (1 << i) != 0)
        .map(|(_, p)| p.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(props: &[&str]) -> PropSet {
        props.iter().copied().collect()
    }

    /// Two props {a, goal}; q0 --a--> q1 --goal--> q2 (accepting), else stay.
    fn chain() -> TaskDfa {
        parse_dfa(
            "props: a goal\nstates: q0 q1 q2\ninitial: q0\naccepting: q2\ndefault: self-loop\n\
             q0 --[a]--> q1\nq1 --[goal]--> q2\n",
        )
        .unwrap()
    }

    #[test]
    fn step_and_stay() {
        let d = chain();
        assert_eq!(d.step(0, &set(&["a"])).unwrap(), 1);
        assert_eq!(d.step(0, &set(&[])).unwrap(), 0);
        assert_eq!(d.step(1, &set(&["goal"])).unwrap(), 2);
        assert!(matches!(
            d.step(0, &set(&["zzz"])),
            Err(DfaError::UnknownProp(_))
        ));
        assert!(matches!(d.step(9, &set(&[])), Err(DfaError::ModeOutOfRange(9))));
    }

    #[test]
    fn empty_word_is_initial() {
        let d = chain();
        assert_eq!(d.run_word(&[]).unwrap(), (0, false));
    }

    #[test]
    fn acceptance_is_sticky_over_prefixes() {
        // an accepting mode that can be left again still accepts the word
        let d = parse_dfa(
            "props: x\nstates: s f\ninitial: s\naccepting: f\n\
             s --[x]--> f\ns --[!x]--> s\nf --[x]--> s\nf --[!x]--> s\n",
        )
        .unwrap();
        let (q, acc) = d.run_word(&[set(&["x"]), set(&["x"])]).unwrap();
        assert_eq!(q, 0);
        assert!(acc);
    }

    #[test]
    fn trim_removes_sink_and_reports_dangling() {
        let d = parse_dfa(
            "props: a bad\nstates: q0 q1 qbad\ninitial: q0\naccepting: q1\ndefault: self-loop\n\
             q0 --[a & !bad]--> q1\nq0 --[bad]--> qbad\n",
        )
        .unwrap();
        let rep = d.coaccessible_trim(TrimPolicy::ReportDangling).unwrap();
        assert_eq!(rep.removed, vec!["qbad".to_string()]);
        assert_eq!(rep.dfa.n_modes(), 2);
        assert!(!rep.dfa.is_total());
        // {bad} and {a,bad} from q0
        assert_eq!(rep.dangling.len(), 2);
        assert!(matches!(
            rep.dfa.step(0, &set(&["bad"])),
            Err(DfaError::Dangling { .. })
        ));

        let rep = d.coaccessible_trim(TrimPolicy::RedirectToDead).unwrap();
        assert!(rep.dfa.is_total());
        assert_eq!(rep.dfa.n_modes(), 3);
        assert_eq!(rep.dfa.mode_name(2), DEAD_MODE);
        assert_eq!(rep.dfa.step(0, &set(&["bad"])).unwrap(), 2);
    }

    #[test]
    fn trim_rejects_unsatisfiable() {
        let d = parse_dfa(
            "props: a\nstates: q0 q1\ninitial: q0\naccepting: q1\ndefault: self-loop\n",
        )
        .unwrap();
        assert!(matches!(
            d.coaccessible_trim(TrimPolicy::ReportDangling),
            Err(DfaError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn project_ignores_foreign_props() {
        let d = chain();
        assert_eq!(d.project(&set(&["a", "O"])), d.symbol(&set(&["a"])).unwrap());
    }
}
