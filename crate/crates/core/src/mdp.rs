//! Labeled Markov decision processes.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::automaton::PropSet;

/// Row sums must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

pub type State = usize;
pub type Action = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("invalid MDP: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("action {action} is not available in state {state}")]
    UnavailableAction { state: String, action: String },
    #[error("state index {0} out of range")]
    StateOutOfRange(State),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error reading {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid grid world: {0}")]
    InvalidGrid(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One failed invariant, as reported by [`LabeledMdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { state: String, action: String, sum: f64 },
    NegativeProbability { state: String, action: String, next: State, p: f64 },
    SuccessorOutOfRange { state: String, action: String, next: State },
    UnknownLabel { state: String, prop: String },
    NoActions { state: String },
    InitialOutOfRange(State),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "({state}, {action}): probabilities sum to {sum}")
            }
            Violation::NegativeProbability { state, action, next, p } => {
                write!(f, "({state}, {action}): negative probability {p} to state {next}")
            }
            Violation::SuccessorOutOfRange { state, action, next } => {
                write!(f, "({state}, {action}): successor {next} out of range")
            }
            Violation::UnknownLabel { state, prop } => {
                write!(f, "state {state}: label {prop:?} is not a declared proposition")
            }
            Violation::NoActions { state } => write!(f, "state {state}: no available action"),
            Violation::InitialOutOfRange(s) => write!(f, "initial state {s} out of range"),
        }
    }
}

/// Sparse distribution over states, sorted by state index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Distribution(Vec<(State, f64)>);

impl Distribution {
    /// Builds a distribution, merging duplicate entries and dropping zeros.
    pub fn new(entries: impl IntoIterator<Item = (State, f64)>) -> Self {
        let mut v: Vec<(State, f64)> = entries.into_iter().collect();
        v.sort_by_key(|e| e.0);
        let mut merged: Vec<(State, f64)> = Vec::with_capacity(v.len());
        for (s, p) in v {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += p,
                _ => merged.push((s, p)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Distribution(merged)
    }

    pub fn point(s: State) -> Self {
        Distribution(vec![(s, 1.0)])
    }

    pub fn entries(&self) -> &[(State, f64)] {
        &self.0
    }

    pub fn prob(&self, s: State) -> f64 {
        self.0
            .binary_search_by_key(&s, |e| e.0)
            .map(|i| self.0[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|e| e.1).sum()
    }

    pub fn support(&self) -> impl Iterator<Item = State> + '_ {
        self.0.iter().filter(|e| e.1 > 0.0).map(|e| e.0)
    }
}

/// `⟨S, A, s0, P, AP, L⟩` with optional per-state action availability.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMdp {
    state_names: Vec<String>,
    action_names: Vec<String>,
    initial: State,
    rows: Vec<Vec<Option<Distribution>>>,
    props: PropSet,
    labels: Vec<PropSet>,
}

impl LabeledMdp {
    /// Builds and validates. `rows[s][a]` is `None` when `a` is unavailable at `s`.
    pub fn new(
        state_names: Vec<String>,
        action_names: Vec<String>,
        initial: State,
        rows: Vec<Vec<Option<Distribution>>>,
        props: PropSet,
        labels: Vec<PropSet>,
    ) -> Result<Self, MdpError> {
        let m = Self::unchecked(state_names, action_names, initial, rows, props, labels);
        let violations = m.validate();
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(MdpError::Invalid(violations))
        }
    }

    /// Builds without validation. Shapes must still agree.
    pub fn unchecked(
        state_names: Vec<String>,
        action_names: Vec<String>,
        initial: State,
        rows: Vec<Vec<Option<Distribution>>>,
        props: PropSet,
        labels: Vec<PropSet>,
    ) -> Self {
        assert_eq!(rows.len(), state_names.len(), "one row set per state");
        assert_eq!(labels.len(), state_names.len(), "one label per state");
        assert!(
            rows.iter().all(|r| r.len() == action_names.len()),
            "one entry per action"
        );
        Self {
            state_names,
            action_names,
            initial,
            rows,
            props,
            labels,
        }
    }

    /// Every violated invariant, with `(s, a)` coordinates. Empty iff valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n_states();
        if self.initial >= n {
            out.push(Violation::InitialOutOfRange(self.initial));
        }
        for s in 0..n {
            let mut any = false;
            for (a, row) in self.rows[s].iter().enumerate() {
                let Some(dist) = row else { continue };
                any = true;
                let state = self.state_names[s].clone();
                let action = self.action_names[a].clone();
                for &(next, p) in dist.entries() {
                    if next >= n {
                        out.push(Violation::SuccessorOutOfRange {
                            state: state.clone(),
                            action: action.clone(),
                            next,
                        });
                    }
                    if p < 0.0 || !p.is_finite() {
                        out.push(Violation::NegativeProbability {
                            state: state.clone(),
                            action: action.clone(),
                            next,
                            p,
                        });
                    }
                }
                let sum = dist.total();
                if (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
                    out.push(Violation::RowSum { state, action, sum });
                }
            }
            if !any {
                out.push(Violation::NoActions {
                    state: self.state_names[s].clone(),
                });
            }
            for p in self.labels[s].iter() {
                if !self.props.contains(p) {
                    out.push(Violation::UnknownLabel {
                        state: self.state_names[s].clone(),
                        prop: p.to_string(),
                    });
                }
            }
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn initial(&self) -> State {
        self.initial
    }

    pub fn state_name(&self, s: State) -> &str {
        &self.state_names[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_name(&self, a: Action) -> &str {
        &self.action_names[a]
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn props(&self) -> &PropSet {
        &self.props
    }

    pub fn label(&self, s: State) -> &PropSet {
        &self.labels[s]
    }

    pub fn is_available(&self, s: State, a: Action) -> bool {
        self.rows[s][a].is_some()
    }

    pub fn available_actions(&self, s: State) -> impl Iterator<Item = Action> + '_ {
        self.rows[s]
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(a, _)| a)
    }

    /// `P(· | s, a)`.
    pub fn transition(&self, s: State, a: Action) -> Result<&Distribution, MdpError> {
        let row = self.rows.get(s).ok_or(MdpError::StateOutOfRange(s))?;
        row.get(a)
            .and_then(Option::as_ref)
            .ok_or_else(|| MdpError::UnavailableAction {
                state: self.state_names[s].clone(),
                action: self
                    .action_names
                    .get(a)
                    .cloned()
                    .unwrap_or_else(|| format!("#{a}")),
            })
    }

    /// Successor lists of the positive-probability move graph (deduplicated).
    pub fn move_graph(&self) -> Vec<Vec<State>> {
        (0..self.n_states())
            .map(|s| {
                let mut next: Vec<State> = self.rows[s]
                    .iter()
                    .flatten()
                    .flat_map(|d| d.support())
                    .collect();
                next.sort_unstable();
                next.dedup();
                next
            })
            .collect()
    }

    /// Reads the explicit sparse text format; see [`parse_mdp`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MdpError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MdpError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        parse_mdp(&text)
    }
}

/// Free-function form of [`LabeledMdp::validate`].
pub fn validate_mdp(m: &LabeledMdp) -> Vec<Violation> {
    m.validate()
}

/// Parses the sparse text format:
///
/// ```text
/// states: s0 s1 s2
/// actions: go stay
/// initial: s0
/// props: goal
/// label: s2 goal
/// s0 go: s1=1.0
/// s1 go: s2=0.9 s1=0.1
/// ```
///
/// A `(state, action)` pair with no line is unavailable.
pub fn parse_mdp(text: &str) -> Result<LabeledMdp, MdpError> {
    let err = |line: usize, msg: String| MdpError::Parse { line, msg };
    let mut states: Option<Vec<String>> = None;
    let mut actions: Option<Vec<String>> = None;
    let mut initial: Option<(usize, String)> = None;
    let mut props = PropSet::new();
    let mut label_lines: Vec<(usize, String, Vec<String>)> = Vec::new();
    let mut trans_lines: Vec<(usize, String, String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (head, rest) = line
            .split_once(':')
            .ok_or_else(|| err(line_no, format!("unrecognised line {line:?}")))?;
        let values: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        let head_words: Vec<&str> = head.split_whitespace().collect();
        match head_words.as_slice() {
            ["states"] => states = Some(values),
            ["actions"] => actions = Some(values),
            ["initial"] if values.len() == 1 => initial = Some((line_no, values[0].clone())),
            ["props"] => props = values.into_iter().collect(),
            ["label"] if !values.is_empty() => {
                label_lines.push((line_no, values[0].clone(), values[1..].to_vec()))
            }
            [s, a] => trans_lines.push((line_no, s.to_string(), a.to_string(), rest.to_string())),
            _ => return Err(err(line_no, format!("unrecognised line {line:?}"))),
        }
    }
    let states = states.ok_or_else(|| err(0, "missing `states:`".into()))?;
    let actions = actions.ok_or_else(|| err(0, "missing `actions:`".into()))?;
    let (init_line, init) = initial.ok_or_else(|| err(0, "missing `initial:`".into()))?;
    let state_idx = |line: usize, name: &str| {
        states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| err(line, format!("unknown state {name:?}")))
    };
    let init = state_idx(init_line, &init)?;
    let mut labels = vec![PropSet::new(); states.len()];
    for (line, s, ps) in label_lines {
        let s = state_idx(line, &s)?;
        for p in ps {
            labels[s].insert(p);
        }
    }
    let mut rows: Vec<Vec<Option<Distribution>>> = vec![vec![None; actions.len()]; states.len()];
    for (line, s, a, rest) in trans_lines {
        let s = state_idx(line, &s)?;
        let a = actions
            .iter()
            .position(|x| *x == a)
            .ok_or_else(|| err(line, format!("unknown action {a:?}")))?;
        let mut entries = Vec::new();
        for item in rest.split_whitespace() {
            let (next, p) = item
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected state=prob, got {item:?}")))?;
            let p: f64 = p
                .parse()
                .map_err(|_| err(line, format!("bad probability {p:?}")))?;
            entries.push((state_idx(line, next)?, p));
        }
        if rows[s][a].is_some() {
            return Err(err(line, "duplicate (state, action) row".into()));
        }
        rows[s][a] = Some(Distribution::new(entries));
    }
    LabeledMdp::new(states, actions, init, rows, props, labels)
}
