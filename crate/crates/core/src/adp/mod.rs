//! Model-free, level-ordered approximate dynamic programming.
//!
//! Levels are solved in order. Within a level each learned mode gets a linear
//! value function over a kernel basis, fitted by minimising the expected
//! value along short sampled paths subject to the sampled Bellman inequality
//! `B̂V ≤ V`, enforced with an augmented Lagrangian. Accepting states are
//! pinned to `α`; modes of finished levels are frozen and read as fixed
//! boundary values. The solver only talks to a [`Simulator`].

mod kernel;
mod lagrangian;
mod objective;
mod value;

pub use kernel::{kernel_feature, shortest_path_lengths, KernelBasis};
pub use lagrangian::{step_size, update_multipliers, LagrangianState};
pub use objective::{
    constraint_residual, evaluate_state, mc_gradient, merge_draws, pathwise_gradient, path_objective, penalty, sample_path, score_weights,
    state_objective, Outcome, PathSample, PathStep, StateEval, SuccessorSampler,
};
pub use value::{LevelLayout, ModeValue, ValueApprox};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::Decomposition;
use crate::exact::{BoundaryConvention, SoftPolicy};
use crate::product::PState;
use crate::sim::Simulator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdpError {
    #[error("decomposition has {decomposition} modes but the simulator has {simulator}")]
    ModeMismatch { decomposition: usize, simulator: usize },
    #[error("kernel basis covers {basis} states but the simulator has {simulator}")]
    BasisMismatch { basis: usize, simulator: usize },
    #[error("parameters diverged while solving level {level} (|θ|∞ = {norm:e})")]
    Diverged { level: usize, norm: f64 },
    #[error("level {level} sampled a successor in mode {mode}, which is solved later")]
    LevelOrder { level: usize, mode: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Solver knobs. Discount and temperature come from the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdpConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Amplification of satisfaction: the value pinned on accepting states,
    /// or the reward scale under [`BoundaryConvention::RewardOnEntry`].
    pub alpha: f64,
    pub boundary: BoundaryConvention,
    /// Inner-loop tolerance on the largest value change, and outer-loop
    /// tolerance on the gradient norm.
    pub epsilon: f64,
    /// Growth factor `b` of the quadratic penalty weight.
    pub b: f64,
    pub eta: f64,
    /// Epochs per level at the full step size.
    pub eta_hold: usize,
    /// Half-life, in epochs, of the step size after the hold.
    pub eta_half_life: f64,
    pub nu0: f64,
    pub nu_max: f64,
    pub lambda0: f64,
    /// Paths per gradient estimate.
    pub n_trajectories: usize,
    /// States per path.
    pub max_traj_len: usize,
    /// Successor samples per action when estimating `B̂V`.
    pub successor_samples: usize,
    /// Reuse one batch of successor samples per state.
    pub cache_successors: bool,
    /// Draw start states by cycling through shuffled passes over the
    /// constraint set instead of independently.
    pub stratified_starts: bool,
    /// Include the score-function term of the gradient.
    pub score_term: bool,
    /// Subtract a leave-one-out baseline in the score term.
    pub score_baseline: bool,
    /// Divide the step by `1 + λ + ν`.
    pub normalize_step: bool,
    /// Heavy-ball momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Gradients longer than this are rescaled to this Euclidean length;
    /// `inf` disables clipping.
    pub grad_clip: f64,
    /// Successor samples per action when building the final policy.
    pub policy_samples: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub theta_init: f64,
    /// `|θ|∞` above which the solve is abandoned.
    pub theta_bound: f64,
    /// Kernel width and center spacing, used by callers that build a grid basis.
    pub sigma: f64,
    pub center_interval: usize,
    pub seed: u64,
    /// Product states whose values are recorded after every epoch.
    pub trace_states: Vec<PState>,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 2.0,
            alpha: 60.0,
            boundary: BoundaryConvention::PinnedAccepting,
            epsilon: 1e-3,
            b: 1.5,
            eta: 2.5,
            eta_hold: 300,
            eta_half_life: 15.0,
            nu0: 2.0,
            nu_max: 20.0,
            lambda0: 0.0,
            n_trajectories: 30,
            max_traj_len: 3,
            successor_samples: 1000,
            cache_successors: true,
            stratified_starts: true,
            score_term: true,
            score_baseline: true,
            normalize_step: true,
            momentum: 0.5,
            grad_clip: 10.0,
            policy_samples: 1000,
            max_outer: 80,
            max_inner: 50,
            theta_init: 0.0,
            theta_bound: 1e6,
            sigma: 1.0,
            center_interval: 1,
            seed: 0,
            trace_states: Vec::new(),
        }
    }
}

impl AdpConfig {
    pub fn from_toml(text: &str) -> Result<Self, AdpError> {
        let cfg: Self = toml::from_str(text).map_err(|e| AdpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdpError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AdpError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), AdpError> {
        let bad = |m: &str| Err(AdpError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.b >= 1.0) {
            return bad("b must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta_half_life > 0.0) {
            return bad("eta and eta_half_life must be positive");
        }
        if !(self.nu0 >= 0.0 && self.nu_max >= self.nu0) {
            return bad("need 0 <= nu0 <= nu_max");
        }
        if self.n_trajectories == 0 || self.max_traj_len == 0 || self.successor_samples == 0 || self.policy_samples == 0 {
            return bad("path counts, lengths and sample sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be positive");
        }
        if !(self.sigma > 0.0) || self.center_interval == 0 {
            return bad("kernel width and center interval must be positive");
        }
        Ok(())
    }
}

/// Summary of one solved level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub modes: Vec<String>,
    pub constraint_states: usize,
    pub epochs: usize,
    pub outer_iterations: usize,
    pub lambda: f64,
    pub nu: f64,
    /// `E[B(g)]` and `max B(g)` over the constraint states after the last outer iteration.
    pub mean_violation: f64,
    pub max_violation: f64,
    pub last_gradient_norm: f64,
}

/// Values of the trace states after each epoch, epochs numbered across levels.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConvergenceTrace {
    pub states: Vec<PState>,
    pub values: Vec<Vec<f64>>,
    /// Level being solved at each epoch.
    pub level: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TadpResult {
    pub approx: ValueApprox,
    /// `V` at every product state.
    pub values: Vec<f64>,
    pub policy: SoftPolicy,
    pub levels: Vec<LevelReport>,
    pub trace: ConvergenceTrace,
    pub epochs: usize,
    pub simulator_steps: u64,
}

/// Product states constrained while solving level `level`: pairs `(s, q)`
/// with `q` a learned mode of a meta-mode `X` in the level and `s` in
/// `Inv(X) ∪ ⋃ Guard(X, ·)`, excluding pinned states.
pub fn level_constraint_states(sim: &dyn Simulator, d: &Decomposition, level: usize) -> Vec<PState> {
    let mut out = Vec::new();
    for &x in &d.levels[level] {
        let states = d.constraint_states(x);
        for &q in &d.meta_modes[x] {
            if d.accepting[q] {
                continue;
            }
            for &s in &states {
                if let Some(i) = sim.index_of(s, q) {
                    if !sim.is_accepting(i) && !sim.is_sink(i) {
                        out.push(i);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Shuffled passes over `0..n`.
struct StartDeck {
    order: Vec<usize>,
    next: usize,
}

impl StartDeck {
    fn new(n: usize) -> Self {
        Self { next: n, order: (0..n).collect() }
    }

    fn draw(&mut self, rng: &mut impl Rng) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

/// Runs the level-ordered solver.
pub fn tadp_solve(
    sim: &dyn Simulator,
    d: &Decomposition,
    basis: &KernelBasis,
    cfg: &AdpConfig,
) -> Result<TadpResult, AdpError> {
    cfg.validate()?;
    if cfg.gamma != sim.gamma() || cfg.tau != sim.tau() {
        return Err(AdpError::Config(format!(
            "configured (γ, τ) = ({}, {}) but the simulator uses ({}, {})",
            cfg.gamma,
            cfg.tau,
            sim.gamma(),
            sim.tau()
        )));
    }
    if d.mode_names.len() != sim.n_modes() {
        return Err(AdpError::ModeMismatch { decomposition: d.mode_names.len(), simulator: sim.n_modes() });
    }
    if basis.n_states() != sim.n_mdp_states() {
        return Err(AdpError::BasisMismatch { basis: basis.n_states(), simulator: sim.n_mdp_states() });
    }
    let l = basis.n_features();
    let accepting_value = match cfg.boundary {
        BoundaryConvention::PinnedAccepting => cfg.alpha,
        BoundaryConvention::RewardOnEntry => 0.0,
    };
    let modes = (0..sim.n_modes())
        .map(|q| {
            if d.accepting[q] {
                ModeValue::Constant(accepting_value)
            } else if d.dropped_modes.contains(&q) {
                ModeValue::Constant(0.0)
            } else {
                ModeValue::Learned(vec![cfg.theta_init; l])
            }
        })
        .collect();
    let mut va = ValueApprox::new(basis.clone(), modes, cfg.alpha, cfg.boundary);
    let mut sampler = if cfg.cache_successors {
        SuccessorSampler::cached(cfg.successor_samples, cfg.seed ^ 0x5eed_cac4e)
    } else {
        SuccessorSampler::fresh(cfg.successor_samples)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = ConvergenceTrace { states: cfg.trace_states.clone(), ..Default::default() };
    let mut reports = Vec::new();
    let mut epochs = 0;
    let level_of: Vec<Option<usize>> = (0..sim.n_modes()).map(|q| d.level_of_mode(q)).collect();

    for level in 0..d.n_levels() {
        let learned: Vec<usize> = d.modes_in_level(level).into_iter().filter(|&q| !d.accepting[q]).collect();
        if learned.is_empty() {
            continue;
        }
        let layout = LevelLayout::new(learned.clone(), sim.n_modes(), l);
        let starts = level_constraint_states(sim, d, level);
        let mut report = LevelReport {
            level,
            modes: learned.iter().map(|&q| d.mode_names[q].clone()).collect(),
            constraint_states: starts.len(),
            epochs: 0,
            outer_iterations: 0,
            lambda: cfg.lambda0,
            nu: cfg.nu0,
            mean_violation: 0.0,
            max_violation: 0.0,
            last_gradient_norm: 0.0,
        };
        if starts.is_empty() {
            reports.push(report);
            continue;
        }
        let mut velocity = vec![0.0; layout.dim()];
        let mut ls = LagrangianState::new(cfg.lambda0, cfg.nu0, cfg.b, cfg.nu_max);
        let mut theta = layout.gather(&va);
        let mut current: Vec<f64> = starts.iter().map(|&x| va.value(sim, x)).collect();
        let mut j = 0;
        let mut deck = StartDeck::new(starts.len());
        for _ in 0..cfg.max_outer {
            let mut grad_norm = f64::INFINITY;
            for _ in 0..cfg.max_inner {
                let paths: Vec<PathSample> = (0..cfg.n_trajectories)
                    .map(|_| {
                        let start = if cfg.stratified_starts {
                            starts[deck.draw(&mut rng)]
                        } else {
                            starts[rng.gen_range(0..starts.len())]
                        };
                        sample_path(sim, &va, &layout, start, cfg.max_traj_len, &mut sampler, &mut rng)
                    })
                    .collect();
                for h in &paths {
                    for st in &h.steps {
                        for o in st.successors.iter().flatten() {
                            let q = sim.mode_of(o.next);
                            if matches!(level_of[q], Some(l) if l > level) {
                                return Err(AdpError::LevelOrder { level, mode: d.mode_names[q].clone() });
                            }
                        }
                    }
                }
                let grad = if cfg.score_term {
                    mc_gradient(sim, &va, &layout, &ls, &paths, cfg.score_baseline)
                } else {
                    pathwise_gradient(sim, &va, &layout, &ls, &paths)
                };

                grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let mut eta = step_size(cfg.eta, cfg.eta_hold, cfg.eta_half_life, j);
                if cfg.normalize_step {
                    eta /= 1.0 + ls.lambda + ls.nu;
                }
                let clip = if grad_norm > cfg.grad_clip { cfg.grad_clip / grad_norm } else { 1.0 };
                for ((t, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = cfg.momentum * *v + clip * g;
                    *t -= eta * *v;
                }
                let norm = inf_norm(&theta);
                if !norm.is_finite() || norm > cfg.theta_bound {
                    return Err(AdpError::Diverged { level, norm });
                }
                layout.scatter(&mut va, &theta);
                let next: Vec<f64> = starts.iter().map(|&x| va.value(sim, x)).collect();
                let change = current.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                current = next;
                trace.values.push(trace.states.iter().map(|&x| va.value(sim, x)).collect());
                trace.level.push(level);
                j += 1;
                epochs += 1;
                if change <= cfg.epsilon {
                    break;
                }
            }
            let residuals: Vec<f64> = starts
                .iter()
                .map(|&x| penalty(constraint_residual(sim, &va, x, &mut sampler, &mut rng)))
                .collect();
            let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
            update_multipliers(&mut ls, mean);
            report.outer_iterations += 1;
            report.mean_violation = mean;
            report.max_violation = residuals.iter().copied().fold(0.0, f64::max);
            report.last_gradient_norm = grad_norm;
            if grad_norm <= cfg.epsilon {
                break;
            }
        }
        report.epochs = j;
        report.lambda = ls.lambda;
        report.nu = ls.nu;
        reports.push(report);
    }

    let policy = build_policy(sim, &va, cfg);
    let values = va.values(sim);
    Ok(TadpResult {
        approx: va,
        values,
        policy,
        levels: reports,
        trace,
        epochs,
        simulator_steps: sampler.simulator_steps(),
    })
}

/// Softmax policy from `Q̂` estimated with fresh simulator samples; pinned
/// states get the uniform policy.
pub fn build_policy(sim: &dyn Simulator, va: &ValueApprox, cfg: &AdpConfig) -> SoftPolicy {
    let mut sampler = SuccessorSampler::cached(cfg.policy_samples, cfg.seed ^ 0x90_11c7);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = LevelLayout::new(Vec::new(), sim.n_modes(), va.basis().n_features());
    let q_values = (0..sim.n_states())
        .map(|x| {
            let mut row = vec![f64::NEG_INFINITY; sim.n_actions()];
            let avail = sim.available_actions(x);
            if sim.is_accepting(x) || sim.is_sink(x) {
                for &a in avail {
                    row[a] = 0.0;
                }
            } else {
                let succ = sampler.successors(sim, x, &mut rng);
                let e = evaluate_state(sim, va, &layout, x, &succ, false);
                for (&a, q) in avail.iter().zip(e.q) {
                    row[a] = q;
                }
            }
            row
        })
        .collect();
    SoftPolicy::from_q_values(q_values, sim.tau())
}
