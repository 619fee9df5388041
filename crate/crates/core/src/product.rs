//! Synchronous product of a labeled MDP with a task automaton.
//!
//! The automaton reads the label of the state being entered:
//! `P((s',q') | (s,q), a) = P(s'|s,a) · 1{q' = δ(q, L(s'))}` and the initial
//! product state is `(s0, δ(q0, L(s0)))`. Accepting product states are
//! absorbing with zero reward; elsewhere the reward is the one-step
//! probability of entering an accepting mode.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::automaton::{DfaError, Mode, Symbol, TaskDfa};
use crate::mdp::{Action, LabeledMdp, State, STOCHASTIC_TOL};

/// Index of a product state.
pub type PState = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProductError {
    #[error("automaton propositions {0:?} are not declared by the MDP")]
    PropMismatch(Vec<String>),
    #[error("discount factor {0} must lie in (0, 1)")]
    InvalidGamma(f64),
    #[error("temperature {0} must be positive")]
    InvalidTau(f64),
    #[error("product state ({0}, {1}) does not exist")]
    UnknownState(String, String),
    #[error("action index {0} out of range")]
    UnknownAction(Action),
    #[error(transparent)]
    Dfa(#[from] DfaError),
}

/// One `(state, action)` row of the product.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductRow {
    pub next: Vec<(PState, f64)>,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductOptions {
    pub gamma: f64,
    pub tau: f64,
    /// Keep only product states reachable from the initial one.
    pub prune_unreachable: bool,
}

impl ProductOptions {
    pub fn new(gamma: f64, tau: f64) -> Self {
        Self {
            gamma,
            tau,
            prune_unreachable: false,
        }
    }
}

/// The product MDP. States are ordered mode-major, then by MDP state index.
///
/// Transition rows and rewards are only reachable through [`Self::row`],
/// [`Self::transition`] and [`Self::reward`]; each call bumps a read counter
/// so tests can assert that a code path never looked at the model.
#[derive(Debug)]
pub struct ProductMdp {
    n_mdp_states: usize,
    n_modes: usize,
    states: Vec<(State, Mode)>,
    index: Vec<Option<PState>>,
    names: Vec<String>,
    mode_names: Vec<String>,
    action_names: Vec<String>,
    initial: PState,
    accepting: Vec<bool>,
    sink: Vec<bool>,
    rows: Vec<Vec<Option<ProductRow>>>,
    gamma: f64,
    tau: f64,
    warnings: Vec<String>,
    reads: AtomicU64,
}

impl Clone for ProductMdp {
    fn clone(&self) -> Self {
        Self {
            n_mdp_states: self.n_mdp_states,
            n_modes: self.n_modes,
            states: self.states.clone(),
            index: self.index.clone(),
            names: self.names.clone(),
            mode_names: self.mode_names.clone(),
            action_names: self.action_names.clone(),
            initial: self.initial,
            accepting: self.accepting.clone(),
            sink: self.sink.clone(),
            rows: self.rows.clone(),
            gamma: self.gamma,
            tau: self.tau,
            warnings: self.warnings.clone(),
            reads: AtomicU64::new(0),
        }
    }
}

/// Builds the full product with the given discount and temperature.
pub fn build_product(
    m: &LabeledMdp,
    dfa: &TaskDfa,
    gamma: f64,
    tau: f64,
) -> Result<ProductMdp, ProductError> {
    build_product_with(m, dfa, ProductOptions::new(gamma, tau))
}

pub fn build_product_with(
    m: &LabeledMdp,
    dfa: &TaskDfa,
    opts: ProductOptions,
) -> Result<ProductMdp, ProductError> {
    let missing: Vec<String> = dfa
        .props()
        .iter()
        .filter(|p| !m.props().contains(p))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ProductError::PropMismatch(missing));
    }
    if !(opts.gamma > 0.0 && opts.gamma < 1.0) {
        return Err(ProductError::InvalidGamma(opts.gamma));
    }
    if !(opts.tau > 0.0 && opts.tau.is_finite()) {
        return Err(ProductError::InvalidTau(opts.tau));
    }
    let mut warnings = Vec::new();
    let co = dfa.coaccessible();
    let dead: Vec<&str> = (0..dfa.n_modes())
        .filter(|&q| !co[q])
        .map(|q| dfa.mode_name(q))
        .collect();
    if !dead.is_empty() {
        warnings.push(format!(
            "automaton modes {dead:?} cannot reach an accepting mode; trim before planning"
        ));
    }

    let n_s = m.n_states();
    let n_q = dfa.n_modes();
    let n_a = m.n_actions();
    let symbols: Vec<Symbol> = (0..n_s).map(|s| dfa.project(m.label(s))).collect();
    let flat = |s: State, q: Mode| q * n_s + s;

    // rows over the full S × Q index space
    let mut full: Vec<Vec<Option<ProductRow>>> = Vec::with_capacity(n_s * n_q);
    for q in 0..n_q {
        for s in 0..n_s {
            let mut row = Vec::with_capacity(n_a);
            for a in 0..n_a {
                if !m.is_available(s, a) {
                    row.push(None);
                    continue;
                }
                if dfa.is_accepting(q) {
                    row.push(Some(ProductRow {
                        next: vec![(flat(s, q), 1.0)],
                        reward: 0.0,
                    }));
                    continue;
                }
                let dist = m.transition(s, a).expect("available action");
                let mut next = Vec::with_capacity(dist.entries().len());
                let mut reward = 0.0;
                for &(s2, p) in dist.entries() {
                    let q2 = dfa.step_symbol(q, symbols[s2])?;
                    if dfa.is_accepting(q2) {
                        reward += p;
                    }
                    next.push((flat(s2, q2), p));
                }
                next.sort_by_key(|e| e.0);
                row.push(Some(ProductRow { next, reward }));
            }
            full.push(row);
        }
    }
    let q_init = dfa.step_symbol(dfa.initial(), symbols[m.initial()])?;
    let init_flat = flat(m.initial(), q_init);

    let keep: Vec<bool> = if opts.prune_unreachable {
        let mut seen = vec![false; n_s * n_q];
        seen[init_flat] = true;
        let mut queue = VecDeque::from([init_flat]);
        while let Some(i) = queue.pop_front() {
            for row in full[i].iter().flatten() {
                for &(j, p) in &row.next {
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        seen
    } else {
        vec![true; n_s * n_q]
    };

    let mut index = vec![None; n_s * n_q];
    let mut states = Vec::new();
    for (i, slot) in index.iter_mut().enumerate() {
        if keep[i] {
            *slot = Some(states.len());
            states.push((i % n_s, i / n_s));
        }
    }
    let rows: Vec<Vec<Option<ProductRow>>> = full
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, row)| {
            row.into_iter()
                .map(|r| {
                    r.map(|r| ProductRow {
                        next: r
                            .next
                            .into_iter()
                            .map(|(j, p)| (index[j].expect("successor kept"), p))
                            .collect(),
                        reward: r.reward,
                    })
                })
                .collect()
        })
        .collect();
    let names = states
        .iter()
        .map(|&(s, q)| format!("({}, {})", m.state_name(s), dfa.mode_name(q)))
        .collect();
    let accepting: Vec<bool> = states.iter().map(|&(_, q)| dfa.is_accepting(q)).collect();
    let sink = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            !accepting[i]
                && row
                    .iter()
                    .flatten()
                    .all(|r| r.next.len() == 1 && r.next[0].0 == i)
        })
        .collect();

    Ok(ProductMdp {
        n_mdp_states: n_s,
        n_modes: n_q,
        initial: index[init_flat].expect("initial kept"),
        states,
        index,
        names,
        mode_names: dfa.mode_names().to_vec(),
        action_names: m.action_names().to_vec(),
        accepting,
        sink,
        rows,
        gamma: opts.gamma,
        tau: opts.tau,
        warnings,
        reads: AtomicU64::new(0),
    })
}

impl ProductMdp {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn n_mdp_states(&self) -> usize {
        self.n_mdp_states
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn initial(&self) -> PState {
        self.initial
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `(mdp state, mode)` of a product state.
    pub fn state(&self, i: PState) -> (State, Mode) {
        self.states[i]
    }

    pub fn mode_of(&self, i: PState) -> Mode {
        self.states[i].1
    }

    pub fn mdp_state_of(&self, i: PState) -> State {
        self.states[i].0
    }

    /// Product index of `(s, q)`, if it exists (it may have been pruned).
    pub fn index_of(&self, s: State, q: Mode) -> Option<PState> {
        if s >= self.n_mdp_states || q >= self.n_modes {
            return None;
        }
        self.index[q * self.n_mdp_states + s]
    }

    pub fn state_name(&self, i: PState) -> &str {
        &self.names[i]
    }

    pub fn mode_name(&self, q: Mode) -> &str {
        &self.mode_names[q]
    }

    pub fn mode_names(&self) -> &[String] {
        &self.mode_names
    }

    pub fn action_name(&self, a: Action) -> &str {
        &self.action_names[a]
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn is_accepting(&self, i: PState) -> bool {
        self.accepting[i]
    }

    /// Absorbing under every action and not accepting.
    pub fn is_sink(&self, i: PState) -> bool {
        self.sink[i]
    }

    pub fn is_available(&self, i: PState, a: Action) -> bool {
        self.rows[i][a].is_some()
    }

    pub fn available_actions(&self, i: PState) -> impl Iterator<Item = Action> + '_ {
        self.rows[i]
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(a, _)| a)
    }

    /// Product states whose mode is `q`, in index order.
    pub fn states_in_mode(&self, q: Mode) -> Vec<PState> {
        (0..self.n_states()).filter(|&i| self.states[i].1 == q).collect()
    }

    /// The `(state, action)` row. Counts as one model read.
    pub fn row(&self, i: PState, a: Action) -> Option<&ProductRow> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.rows.get(i)?.get(a)?.as_ref()
    }

    /// Successor distribution. Counts as one model read.
    pub fn transition(&self, i: PState, a: Action) -> Option<&[(PState, f64)]> {
        self.row(i, a).map(|r| r.next.as_slice())
    }

    /// Stored (unamplified) reward. Counts as one model read.
    pub fn reward(&self, i: PState, a: Action) -> Option<f64> {
        self.row(i, a).map(|r| r.reward)
    }

    /// Number of model reads since construction or the last reset.
    pub fn model_reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn reset_model_reads(&self) {
        self.reads.store(0, Ordering::Relaxed);
    }

    /// Rows without touching the read counter, for trusted in-crate consumers
    /// that copy the model once (the simulator).
    pub(crate) fn raw_row(&self, i: PState, a: Action) -> Option<&ProductRow> {
        self.rows[i][a].as_ref()
    }

    /// Row-sum and reward-range defects, as `(state, action, message)`.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.n_states() {
            for a in 0..self.n_actions() {
                let Some(r) = self.rows[i][a].as_ref() else { continue };
                let sum: f64 = r.next.iter().map(|e| e.1).sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(format!("({}, {}): row sums to {sum}", self.names[i], self.action_names[a]));
                }
                if !(0.0..=1.0 + STOCHASTIC_TOL).contains(&r.reward) {
                    out.push(format!("({}, {}): reward {}", self.names[i], self.action_names[a], r.reward));
                }
            }
        }
        out
    }

    /// Sparse text dump: a header, one line per state, one line per row.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "states: {}", self.n_states()).unwrap();
        writeln!(out, "actions: {}", self.action_names.join(" ")).unwrap();
        writeln!(out, "initial: {}", self.initial).unwrap();
        writeln!(out, "gamma: {}", self.gamma).unwrap();
        writeln!(out, "tau: {}", self.tau).unwrap();
        for i in 0..self.n_states() {
            let (s, q) = self.states[i];
            writeln!(
                out,
                "state {i} s={s} q={} accepting={} name={}",
                self.mode_names[q], self.accepting[i], self.names[i]
            )
            .unwrap();
        }
        for i in 0..self.n_states() {
            for a in 0..self.n_actions() {
                let Some(r) = self.rows[i][a].as_ref() else { continue };
                write!(out, "{i} {}: reward={:.12}", self.action_names[a], r.reward).unwrap();
                for (j, p) in &r.next {
                    write!(out, " {j}={p:.12}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Reward of `(s, q)` under action `a`, looked up by MDP state and mode.
pub fn product_reward(p: &ProductMdp, s: State, q: Mode, a: Action) -> Result<f64, ProductError> {
    let i = p.index_of(s, q).ok_or_else(|| {
        ProductError::UnknownState(s.to_string(), q.to_string())
    })?;
    if a >= p.n_actions() {
        return Err(ProductError::UnknownAction(a));
    }
    p.reward(i, a).ok_or(ProductError::UnknownAction(a))
}
