//! Exact dynamic programming on the product: softmax and hardmax backups,
//! Gauss-Seidel value iteration, topological value iteration over level sets
//! and policy extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::Decomposition;
use crate::mdp::Action;
use crate::product::{PState, ProductMdp};

pub const DEFAULT_MAX_SWEEPS: u64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("value iteration did not converge after {sweeps} sweeps (last residual {residual:e})")]
    NotConverged { sweeps: u64, residual: f64 },
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("decomposition has {decomposition} modes but the product has {product}")]
    ModeMismatch { decomposition: usize, product: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    Softmax,
    Hardmax(Sense),
}

/// When a Gauss-Seidel solve stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StopRule {
    /// Largest change in one sweep below `ε`.
    Residual,
    /// `γ/(1−γ)` times the largest change below `ε`, which bounds the
    /// distance to the fixed point by `ε`.
    #[default]
    ErrorBound,
}

/// How satisfaction enters the values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundaryConvention {
    /// Reward `α·R` on the step into an accepting mode; accepting values are 0.
    #[default]
    RewardOnEntry,
    /// No reward; accepting values are pinned to `α`.
    PinnedAccepting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub operator: Operator,
    pub epsilon: f64,
    /// Reward (or boundary value) amplification.
    pub alpha: f64,
    pub boundary: BoundaryConvention,
    /// Treat absorbing non-accepting states as terminal failures with value 0
    /// instead of backing them up (where they would collect `τ ln|A|` per step).
    pub terminal_sinks: bool,
    pub stop: StopRule,
    pub max_sweeps: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            operator: Operator::Softmax,
            epsilon: 1e-3,
            alpha: 1.0,
            boundary: BoundaryConvention::RewardOnEntry,
            terminal_sinks: true,
            stop: StopRule::ErrorBound,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

impl SolveOptions {
    fn reward_scale(&self) -> f64 {
        match self.boundary {
            BoundaryConvention::RewardOnEntry => self.alpha,
            BoundaryConvention::PinnedAccepting => 0.0,
        }
    }

    /// Whether state `i` is held fixed rather than backed up.
    pub fn is_pinned(&self, p: &ProductMdp, i: PState) -> bool {
        p.is_accepting(i) || (self.terminal_sinks && p.is_sink(i))
    }

    fn boundary_value(&self) -> f64 {
        match self.boundary {
            BoundaryConvention::RewardOnEntry => 0.0,
            BoundaryConvention::PinnedAccepting => self.alpha,
        }
    }
}

/// Converged values plus accounting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub backup_count: u64,
    pub sweeps: u64,
    pub residual: f64,
    /// Per-stage backups for topological runs, dropped modes first (if any),
    /// then level 0, 1, ...
    pub stage_backups: Vec<u64>,
    pub alpha: f64,
}

impl ValueTable {
    /// Values divided by the amplification factor.
    pub fn deamplified(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / self.alpha).collect()
    }
}

/// `R·scale + γ Σ P V` for one action.
pub fn q_value(p: &ProductMdp, v: &[f64], i: PState, a: Action, reward_scale: f64) -> f64 {
    let row = p.row(i, a).expect("available action");
    let ev: f64 = row.next.iter().map(|&(j, pr)| pr * v[j]).sum();
    reward_scale * row.reward + p.gamma() * ev
}

/// Max-shifted `τ log Σ exp(x/τ)`.
pub fn log_sum_exp(xs: &[f64], tau: f64) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| ((x - m) / tau).exp()).sum();
    m + tau * s.ln()
}

fn q_values(p: &ProductMdp, v: &[f64], i: PState, reward_scale: f64) -> Vec<(Action, f64)> {
    p.available_actions(i)
        .map(|a| (a, q_value(p, v, i, a, reward_scale)))
        .collect()
}

/// Softmax Bellman backup at one state. Does not modify `v`.
pub fn softmax_backup(p: &ProductMdp, v: &[f64], i: PState, reward_scale: f64) -> f64 {
    let qs: Vec<f64> = q_values(p, v, i, reward_scale).into_iter().map(|e| e.1).collect();
    log_sum_exp(&qs, p.tau())
}

/// Hardmax backup and the chosen action (ties go to the lowest index).
pub fn hardmax_backup(p: &ProductMdp, v: &[f64], i: PState, sense: Sense, reward_scale: f64) -> (f64, Action) {
    let mut best: Option<(f64, Action)> = None;
    for (a, q) in q_values(p, v, i, reward_scale) {
        let better = match (best, sense) {
            (None, _) => true,
            (Some((b, _)), Sense::Max) => q > b,
            (Some((b, _)), Sense::Min) => q < b,
        };
        if better {
            best = Some((q, a));
        }
    }
    best.expect("state has an available action")
}

pub fn backup(p: &ProductMdp, v: &[f64], i: PState, op: Operator, reward_scale: f64) -> f64 {
    match op {
        Operator::Softmax => softmax_backup(p, v, i, reward_scale),
        Operator::Hardmax(sense) => hardmax_backup(p, v, i, sense, reward_scale).0,
    }
}

/// In-place sweeps over `order` until the stopping rule holds. Returns `(backups, sweeps, last residual)`.
fn gauss_seidel(
    p: &ProductMdp,
    v: &mut [f64],
    order: &[PState],
    opts: &SolveOptions,
    mut after_sweep: impl FnMut(&[f64]),
) -> Result<(u64, u64, f64), SolveError> {
    if order.is_empty() {
        return Ok((0, 0, 0.0));
    }
    let scale = opts.reward_scale();
    let threshold = match opts.stop {
        StopRule::Residual => opts.epsilon,
        StopRule::ErrorBound => opts.epsilon * (1.0 - p.gamma()) / p.gamma(),
    };
    let mut backups = 0;
    let mut sweeps = 0;
    loop {
        let mut residual: f64 = 0.0;
        for &i in order {
            let new = backup(p, v, i, opts.operator, scale);
            residual = residual.max((new - v[i]).abs());
            v[i] = new;
            backups += 1;
        }
        sweeps += 1;
        after_sweep(v);
        if residual < threshold {
            return Ok((backups, sweeps, residual));
        }
        if sweeps >= opts.max_sweeps {
            return Err(SolveError::NotConverged { sweeps, residual });
        }
    }
}

fn initial_values(p: &ProductMdp, opts: &SolveOptions) -> Result<Vec<f64>, SolveError> {
    if !(opts.epsilon > 0.0) {
        return Err(SolveError::InvalidEpsilon(opts.epsilon));
    }
    Ok((0..p.n_states())
        .map(|i| if p.is_accepting(i) { opts.boundary_value() } else { 0.0 })
        .collect())
}

/// Plain Gauss-Seidel value iteration over every non-pinned state, in index
/// order (mode-major, then MDP state).
pub fn value_iteration(p: &ProductMdp, opts: &SolveOptions) -> Result<ValueTable, SolveError> {
    let order: Vec<PState> = (0..p.n_states()).filter(|&i| !opts.is_pinned(p, i)).collect();
    value_iteration_on(p, opts, &order, None)
}

/// Value iteration restricted to `order`; every other state keeps its value
/// from `start` (or the default boundary initialisation).
pub fn value_iteration_on(
    p: &ProductMdp,
    opts: &SolveOptions,
    order: &[PState],
    start: Option<Vec<f64>>,
) -> Result<ValueTable, SolveError> {
    let mut v = match start {
        Some(v) => v,
        None => initial_values(p, opts)?,
    };
    let (backups, sweeps, residual) = gauss_seidel(p, &mut v, order, opts, |_| {})?;
    Ok(ValueTable {
        values: v,
        backup_count: backups,
        sweeps,
        residual,
        stage_backups: vec![backups],
        alpha: opts.alpha,
    })
}

/// Product states grouped into solve stages: states of dropped modes first,
/// then each level in order. Pinned states are never included.
pub fn stages(p: &ProductMdp, d: &Decomposition, opts: &SolveOptions) -> Vec<Vec<PState>> {
    let mut out = Vec::with_capacity(d.n_levels() + 1);
    let mut dropped = vec![false; p.n_modes()];
    for &q in &d.dropped_modes {
        dropped[q] = true;
    }
    let first: Vec<PState> = (0..p.n_states())
        .filter(|&i| dropped[p.mode_of(i)] && !opts.is_pinned(p, i))
        .collect();
    if !first.is_empty() {
        out.push(first);
    }
    for l in 0..d.n_levels() {
        let mut in_level = vec![false; p.n_modes()];
        for q in d.modes_in_level(l) {
            in_level[q] = true;
        }
        out.push(
            (0..p.n_states())
                .filter(|&i| in_level[p.mode_of(i)] && !opts.is_pinned(p, i))
                .collect(),
        );
    }
    out
}

/// Outcome of re-checking finished stages while later stages are solved.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OrderCheck {
    /// Number of residual re-evaluations compared.
    pub comparisons: u64,
    /// Largest absolute difference from the residual recorded when the stage
    /// finished. Zero when the backup order is respected.
    pub max_change: f64,
    /// Number of comparisons that were not bit-identical.
    pub mismatches: u64,
}

fn tvi(
    p: &ProductMdp,
    d: &Decomposition,
    opts: &SolveOptions,
    check: bool,
) -> Result<(ValueTable, OrderCheck), SolveError> {
    if d.mode_names.len() != p.n_modes() {
        return Err(SolveError::ModeMismatch {
            decomposition: d.mode_names.len(),
            product: p.n_modes(),
        });
    }
    let mut v = initial_values(p, opts)?;
    let scale = opts.reward_scale();
    let mut total = 0;
    let mut sweeps = 0;
    let mut residual: f64 = 0.0;
    let mut per_stage = Vec::new();
    let mut report = OrderCheck::default();
    // (state, residual when its stage finished)
    let mut frozen: Vec<(PState, f64)> = Vec::new();
    for stage in stages(p, d, opts) {
        let (b, s, r) = gauss_seidel(p, &mut v, &stage, opts, |v| {
            if !check {
                return;
            }
            for &(i, before) in &frozen {
                let now = backup(p, v, i, opts.operator, scale) - v[i];
                report.comparisons += 1;
                if now.to_bits() != before.to_bits() {
                    report.mismatches += 1;
                    report.max_change = report.max_change.max((now - before).abs());
                }
            }
        })?;
        total += b;
        sweeps += s;
        residual = residual.max(r);
        per_stage.push(b);
        if check {
            for &i in &stage {
                frozen.push((i, backup(p, &v, i, opts.operator, scale) - v[i]));
            }
        }
    }
    Ok((
        ValueTable {
            values: v,
            backup_count: total,
            sweeps,
            residual,
            stage_backups: per_stage,
            alpha: opts.alpha,
        },
        report,
    ))
}

/// Topological value iteration: solve each stage to convergence with every
/// earlier stage held fixed.
pub fn topological_value_iteration(
    p: &ProductMdp,
    d: &Decomposition,
    opts: &SolveOptions,
) -> Result<ValueTable, SolveError> {
    tvi(p, d, opts, false).map(|r| r.0)
}

/// Topological value iteration that, after every sweep of a later stage,
/// recomputes the Bellman residual of every state in the finished stages and
/// compares it bit-for-bit with the value recorded when that stage finished.
pub fn topological_value_iteration_checked(
    p: &ProductMdp,
    d: &Decomposition,
    opts: &SolveOptions,
) -> Result<(ValueTable, OrderCheck), SolveError> {
    tvi(p, d, opts, true)
}

/// Action distribution and Q-values at every product state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftPolicy {
    /// `probs[i][a]`; zero for unavailable actions.
    pub probs: Vec<Vec<f64>>,
    /// `q_values[i][a]`; `-inf` for unavailable actions.
    pub q_values: Vec<Vec<f64>>,
}

impl SoftPolicy {
    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn action_probs(&self, i: PState) -> &[f64] {
        &self.probs[i]
    }

    /// Samples an action by inverse CDF from a uniform draw in `[0, 1)`.
    pub fn sample(&self, i: PState, u: f64) -> Action {
        let row = &self.probs[i];
        let mut acc = 0.0;
        let mut last = 0;
        for (a, &pr) in row.iter().enumerate() {
            if pr <= 0.0 {
                continue;
            }
            acc += pr;
            last = a;
            if u < acc {
                return a;
            }
        }
        last
    }

    /// Softmax policy from per-action Q-values: `π = exp((Q − V_B)/τ)` with
    /// `V_B = τ log Σ exp(Q/τ)`.
    pub fn from_q_values(q_values: Vec<Vec<f64>>, tau: f64) -> Self {
        let probs = q_values
            .iter()
            .map(|qs| {
                let avail: Vec<f64> = qs.iter().copied().filter(|q| q.is_finite()).collect();
                let vb = log_sum_exp(&avail, tau);
                qs.iter()
                    .map(|&q| if q.is_finite() { ((q - vb) / tau).exp() } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { probs, q_values }
    }
}

fn all_q_values(p: &ProductMdp, v: &[f64], reward_scale: f64) -> Vec<Vec<f64>> {
    (0..p.n_states())
        .map(|i| {
            (0..p.n_actions())
                .map(|a| {
                    if p.is_available(i, a) {
                        q_value(p, v, i, a, reward_scale)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect()
}

/// Softmax policy induced by `v`.
pub fn extract_policy(p: &ProductMdp, v: &[f64], opts: &SolveOptions) -> SoftPolicy {
    SoftPolicy::from_q_values(all_q_values(p, v, opts.reward_scale()), p.tau())
}

/// Deterministic greedy policy (lowest index on ties).
pub fn extract_greedy_policy(p: &ProductMdp, v: &[f64], sense: Sense, opts: &SolveOptions) -> SoftPolicy {
    let scale = opts.reward_scale();
    let q_values = all_q_values(p, v, scale);
    let probs = (0..p.n_states())
        .map(|i| {
            let (_, a) = hardmax_backup(p, v, i, sense, scale);
            let mut row = vec![0.0; p.n_actions()];
            row[a] = 1.0;
            row
        })
        .collect();
    SoftPolicy { probs, q_values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::parse_dfa;
    use crate::decomposition::decompose;
    use crate::mdp::parse_mdp;
    use crate::product::build_product;

    /// s0 → s1 → s2 (goal), deterministic, one action.
    fn chain3(gamma: f64) -> ProductMdp {
        let m = parse_mdp(
            "states: s0 s1 s2\nactions: go\ninitial: s0\nprops: goal\nlabel: s2 goal\n\
             s0 go: s1=1\ns1 go: s2=1\ns2 go: s2=1\n",
        )
        .unwrap();
        let d = parse_dfa(
            "props: goal\nstates: q0 qF\ninitial: q0\naccepting: qF\ndefault: self-loop\nq0 --[goal]--> qF\n",
        )
        .unwrap();
        build_product(&m, &d, gamma, 2.0).unwrap()
    }

    fn hard() -> SolveOptions {
        SolveOptions {
            operator: Operator::Hardmax(Sense::Max),
            ..Default::default()
        }
    }

    #[test]
    fn log_sum_exp_of_zeros() {
        assert!((log_sum_exp(&[0.0; 4], 2.0) - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!(log_sum_exp(&[1e6, 1e6], 1.0).is_finite());
    }

    #[test]
    fn chain_closed_form() {
        let p = chain3(0.9);
        let vt = value_iteration(&p, &hard()).unwrap();
        // (s1, q0) = 1, (s0, q0) = 0.9
        assert!((vt.values[1] - 1.0).abs() < 1e-12);
        assert!((vt.values[0] - 0.9).abs() < 1e-12);
        let soft = value_iteration(&p, &SolveOptions::default()).unwrap();
        // single action: softmax is exact
        assert!((soft.values[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn accepting_only_product_needs_no_backups() {
        let m = parse_mdp("states: s\nactions: a\ninitial: s\nprops: goal\nlabel: s goal\ns a: s=1\n").unwrap();
        let d = parse_dfa("props: goal\nstates: q\ninitial: q\naccepting: q\nq --[true]--> q\n").unwrap();
        let p = crate::product::build_product_with(
            &m,
            &d,
            crate::product::ProductOptions {
                prune_unreachable: true,
                ..crate::product::ProductOptions::new(0.9, 2.0)
            },
        )
        .unwrap();
        let opts = SolveOptions {
            alpha: 60.0,
            boundary: BoundaryConvention::PinnedAccepting,
            ..Default::default()
        };
        let vt = value_iteration(&p, &opts).unwrap();
        assert_eq!(vt.values, vec![60.0]);
        assert_eq!(vt.backup_count, 0);
        let dec = decompose(&m, &d).unwrap();
        let tv = topological_value_iteration(&p, &dec, &opts).unwrap();
        assert_eq!(tv.values, vec![60.0]);
        assert_eq!(tv.backup_count, 0);
    }

    #[test]
    fn tvi_matches_vi_on_chain() {
        let m = parse_mdp(
            "states: s0 s1 s2\nactions: go\ninitial: s0\nprops: goal\nlabel: s2 goal\n\
             s0 go: s1=1\ns1 go: s2=1\ns2 go: s2=1\n",
        )
        .unwrap();
        let d = parse_dfa(
            "props: goal\nstates: q0 qF\ninitial: q0\naccepting: qF\ndefault: self-loop\nq0 --[goal]--> qF\n",
        )
        .unwrap();
        let p = build_product(&m, &d, 0.9, 2.0).unwrap();
        let dec = decompose(&m, &d).unwrap();
        let a = value_iteration(&p, &SolveOptions::default()).unwrap();
        let (b, check) = topological_value_iteration_checked(&p, &dec, &SolveOptions::default()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 2e-3);
        }
        assert_eq!(check.mismatches, 0);
    }

    #[test]
    fn policy_rows_normalise_and_sharpen() {
        let m = parse_mdp(
            "states: s0 s1\nactions: good bad\ninitial: s0\nprops: goal\nlabel: s1 goal\n\
             s0 good: s1=1\ns0 bad: s0=1\ns1 good: s1=1\ns1 bad: s1=1\n",
        )
        .unwrap();
        let d = parse_dfa(
            "props: goal\nstates: q0 qF\ninitial: q0\naccepting: qF\ndefault: self-loop\nq0 --[goal]--> qF\n",
        )
        .unwrap();
        let p = build_product(&m, &d, 0.9, 0.01).unwrap();
        let vt = value_iteration(&p, &SolveOptions::default()).unwrap();
        let pi = extract_policy(&p, &vt.values, &SolveOptions::default());
        for row in &pi.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(pi.probs[0][0] >= 0.99);
        let g = extract_greedy_policy(&p, &vt.values, Sense::Max, &SolveOptions::default());
        assert_eq!(g.probs[0], vec![1.0, 0.0]);
    }

    #[test]
    fn hardmax_ties_and_min() {
        let m = parse_mdp(
            "states: s0 s1\nactions: x y\ninitial: s0\nprops: goal\nlabel: s1 goal\n\
             s0 x: s1=1\ns0 y: s1=1\ns1 x: s1=1\ns1 y: s1=1\n",
        )
        .unwrap();
        let d = parse_dfa(
            "props: goal\nstates: q0 qF\ninitial: q0\naccepting: qF\ndefault: self-loop\nq0 --[goal]--> qF\n",
        )
        .unwrap();
        let p = build_product(&m, &d, 0.9, 2.0).unwrap();
        let v = vec![0.0; p.n_states()];
        assert_eq!(hardmax_backup(&p, &v, 0, Sense::Max, 1.0), (1.0, 0));
        assert_eq!(hardmax_backup(&p, &v, 0, Sense::Min, 1.0), (1.0, 0));
    }

    #[test]
    fn cap_is_reported() {
        let opts = SolveOptions {
            epsilon: 1e-300,
            max_sweeps: 3,
            terminal_sinks: false,
            ..Default::default()
        };
        // an absorbing non-accepting state creeps towards τ ln 2 / (1 − γ)
        let m = parse_mdp("states: s\nactions: a b\ninitial: s\nprops: goal\ns a: s=1\ns b: s=1\n").unwrap();
        let d = parse_dfa(
            "props: goal\nstates: q0 qF\ninitial: q0\naccepting: qF\ndefault: self-loop\nq0 --[goal]--> qF\n",
        )
        .unwrap();
        let p = build_product(&m, &d, 0.9, 2.0).unwrap();
        assert!(matches!(
            value_iteration(&p, &opts),
            Err(SolveError::NotConverged { sweeps: 3, .. })
        ));
    }
}
