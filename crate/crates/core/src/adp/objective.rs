//! Sampled Bellman residuals, the path objective and its Monte-Carlo gradient.
//!
//! Everything here sees the product only through [`Simulator`]: expected
//! successor values are averages over `K` sampled successors per action.
//! Satisfaction enters either through the pinned value `α` of accepting
//! states or through the sampled step reward scaled by `α`, depending on the
//! approximation's boundary convention.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::lagrangian::LagrangianState;
use super::value::{LevelLayout, ValueApprox};
use crate::exact::log_sum_exp;
use crate::mdp::Action;
use crate::product::PState;
use crate::sim::{rng_stream, Simulator};

/// `B(x) = max{x, 0}`.
pub fn penalty(x: f64) -> f64 {
    x.max(0.0)
}

/// A sampled successor together with the fraction of an action's samples
/// that landed on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: PState,
    pub reward: f64,
    pub weight: f64,
}

/// Merges repeated `(successor, reward)` draws into weighted outcomes, in
/// order of first appearance.
pub fn merge_draws(draws: &[(PState, f64)]) -> Vec<Outcome> {
    let w = 1.0 / draws.len() as f64;
    let mut out: Vec<Outcome> = Vec::new();
    for &(next, reward) in draws {
        match out.iter_mut().find(|o| o.next == next && o.reward.to_bits() == reward.to_bits()) {
            Some(o) => o.weight += w,
            None => out.push(Outcome { next, reward, weight: w }),
        }
    }
    out
}

/// Draws successor samples, optionally reusing one fixed batch per state
/// (a sample-average approximation of the expectation).
#[derive(Debug, Clone)]
pub struct SuccessorSampler {
    k: usize,
    seed: Option<u64>,
    cache: HashMap<PState, Vec<Vec<Outcome>>>,
    steps: u64,
}

impl SuccessorSampler {
    /// Fresh samples on every call, drawn from the caller's generator.
    pub fn fresh(k: usize) -> Self {
        assert!(k > 0, "need at least one successor sample");
        Self { k, seed: None, cache: HashMap::new(), steps: 0 }
    }

    /// One batch per state, drawn from a stream keyed by the state index so
    /// the batch does not depend on visiting order.
    pub fn cached(k: usize, seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::fresh(k) }
    }

    pub fn samples_per_action(&self) -> usize {
        self.k
    }

    /// Simulator calls made so far.
    pub fn simulator_steps(&self) -> u64 {
        self.steps
    }

    /// The empirical successor distribution of `K` draws for each available
    /// action of `x`, in the order of `sim.available_actions(x)`.
    pub fn successors(&mut self, sim: &dyn Simulator, x: PState, rng: &mut dyn RngCore) -> Vec<Vec<Outcome>> {
        let k = self.k;
        let draw = |rng: &mut dyn RngCore| -> Vec<Vec<Outcome>> {
            sim.available_actions(x)
                .iter()
                .map(|&a| merge_draws(&(0..k).map(|_| sim.step(x, a, rng)).collect::<Vec<_>>()))
                .collect()
        };
        match self.seed {
            None => {
                self.steps += (k * sim.available_actions(x).len()) as u64;
                draw(rng)
            }
            Some(seed) => {
                if let Some(hit) = self.cache.get(&x) {
                    return hit.clone();
                }
                self.steps += (k * sim.available_actions(x).len()) as u64;
                let mut own = rng_stream(seed, x as u64);
                let batch = draw(&mut own);
                self.cache.insert(x, batch.clone());
                batch
            }
        }
    }
}

/// One visited state of a sampled path, with everything needed to replay
/// its contribution exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub state: PState,
    pub actions: Vec<Action>,
    /// `successors[i]` are the sampled outcomes of `actions[i]`.
    pub successors: Vec<Vec<Outcome>>,
    /// Index into `actions` of the action taken.
    pub taken: usize,
}

/// A short path inside one level; it ends before the first pinned state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSample {
    pub steps: Vec<PathStep>,
}

/// Sampled quantities at one state; gradients are over the level's
/// flattened parameters and are empty when not requested.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEval {
    pub v: f64,
    /// `Q̂(x, a) = Σ w·(c·r + γ V(x'))` per available action, with `c` the
    /// reward scale of the boundary convention.
    pub q: Vec<f64>,
    /// `B̂V(x) = τ log Σ exp(Q̂/τ)`.
    pub bv: f64,
    /// `g(x) = B̂V(x) − V(x)`.
    pub g: f64,
    pub pi: Vec<f64>,
    pub dv: Vec<f64>,
    pub dq: Vec<Vec<f64>>,
    pub dbv: Vec<f64>,
}

fn add_value_grad(va: &ValueApprox, layout: &LevelLayout, sim: &dyn Simulator, x: PState, coef: f64, out: &mut [f64]) {
    if sim.is_accepting(x) || sim.is_sink(x) {
        return;
    }
    if let Some(off) = layout.offset(sim.mode_of(x)) {
        let phi = va.basis().features(sim.mdp_state_of(x));
        for (o, p) in out[off..off + phi.len()].iter_mut().zip(phi) {
            *o += coef * p;
        }
    }
}

/// Evaluates `x` against the given successor samples.
pub fn evaluate_state(
    sim: &dyn Simulator,
    va: &ValueApprox,
    layout: &LevelLayout,
    x: PState,
    successors: &[Vec<Outcome>],
    with_grad: bool,
) -> StateEval {
    let (gamma, tau) = (sim.gamma(), sim.tau());
    let c = va.reward_scale();
    let v = va.value(sim, x);
    let q: Vec<f64> = successors
        .iter()
        .map(|ss| ss.iter().map(|o| o.weight * (c * o.reward + gamma * va.value(sim, o.next))).sum::<f64>())
        .collect();
    let bv = log_sum_exp(&q, tau);
    let pi: Vec<f64> = q.iter().map(|&qa| ((qa - bv) / tau).exp()).collect();
    let (mut dv, mut dq, mut dbv) = (Vec::new(), Vec::new(), Vec::new());
    if with_grad {
        let dim = layout.dim();
        dv = vec![0.0; dim];
        add_value_grad(va, layout, sim, x, 1.0, &mut dv);
        dbv = vec![0.0; dim];
        for (ss, &p) in successors.iter().zip(&pi) {
            let mut d = vec![0.0; dim];
            for o in ss {
                add_value_grad(va, layout, sim, o.next, gamma * o.weight, &mut d);
            }
            for (b, di) in dbv.iter_mut().zip(&d) {
                *b += p * di;
            }
            dq.push(d);
        }
    }
    StateEval { v, q, bv, g: bv - v, pi, dv, dq, dbv }
}

/// `g(x) = B̂V(x) − V(x)` from fresh or cached samples; 0 at pinned states
/// (accepting, sink, or in a constant-valued mode).
pub fn constraint_residual(
    sim: &dyn Simulator,
    va: &ValueApprox,
    x: PState,
    sampler: &mut SuccessorSampler,
    rng: &mut dyn RngCore,
) -> f64 {
    if sim.is_accepting(x) || sim.is_sink(x) || va.theta(sim.mode_of(x)).is_none() {
        return 0.0;
    }
    let succ = sampler.successors(sim, x, rng);
    let layout = LevelLayout::new(Vec::new(), va.n_modes(), va.basis().n_features());
    evaluate_state(sim, va, &layout, x, &succ, false).g
}

/// `f(x) = V(x) + λ B(g(x)) + ν/2 B(g(x))²`.
pub fn state_objective(e: &StateEval, ls: &LagrangianState) -> f64 {
    let b = penalty(e.g);
    e.v + ls.lambda * b + 0.5 * ls.nu * b * b
}

/// `f(h) = Σ_t f(x_t)` over the states of a path.
pub fn path_objective(
    sim: &dyn Simulator,
    va: &ValueApprox,
    layout: &LevelLayout,
    ls: &LagrangianState,
    h: &PathSample,
) -> f64 {
    h.steps
        .iter()
        .map(|st| state_objective(&evaluate_state(sim, va, layout, st.state, &st.successors, false), ls))
        .sum()
}

/// Samples a path of at most `max_len` states from `start`, following the
/// current softmax policy, stopping before any state outside `layout` or
/// pinned (accepting or sink).
#[allow(clippy::too_many_arguments)]
pub fn sample_path(
    sim: &dyn Simulator,
    va: &ValueApprox,
    layout: &LevelLayout,
    start: PState,
    max_len: usize,
    sampler: &mut SuccessorSampler,
    rng: &mut dyn RngCore,
) -> PathSample {
    let mut h = PathSample::default();
    let mut x = start;
    while h.steps.len() < max_len {
        if sim.is_accepting(x) || sim.is_sink(x) || !layout.contains(sim.mode_of(x)) {
            break;
        }
        let successors = sampler.successors(sim, x, rng);
        let e = evaluate_state(sim, va, layout, x, &successors, false);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut taken = e.pi.len() - 1;
        for (i, p) in e.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                taken = i;
                break;
            }
        }
        let actions = sim.available_actions(x).to_vec();
        let a = actions[taken];
        h.steps.push(PathStep { state: x, actions, successors, taken });
        if h.steps.len() < max_len {
            x = sim.step(x, a, rng).0;
            sampler.steps += 1;
        }
    }
    h
}

/// Weight multiplying each path's score: `f(h)`, minus the mean of the other
/// paths' objectives when `baseline` is set.
pub fn score_weights(
    sim: &dyn Simulator,
    va: &ValueApprox,
    layout: &LevelLayout,
    ls: &LagrangianState,
    paths: &[PathSample],
    baseline: bool,
) -> Vec<f64> {
    let f: Vec<f64> = paths.iter().map(|h| path_objective(sim, va, layout, ls, h)).collect();
    let n = f.len();
    let total: f64 = f.iter().sum();
    f.iter()
        .map(|&fh| if baseline && n > 1 { fh - (total - fh) / (n - 1) as f64 } else { fh })
        .collect()
}

/// Monte-Carlo gradient of the expected path objective:
/// `(1/N) Σ_h [Σ_t ∇log π(a_t|x_t)]·w_h + (1/N) Σ_h Σ_t ∇f(x_t)`
/// with `w_h` from [`score_weights`].
pub fn mc_gradient(
    sim: &dyn Simulator,
    va: &ValueApprox,
    layout: &LevelLayout,
    ls: &LagrangianState,
    paths: &[PathSample],
    baseline: bool,
) -> Vec<f64> {
    let dim = layout.dim();
    let mut grad = vec![0.0; dim];
    if paths.is_empty() {
        return grad;
    }
    let tau = sim.tau();
    let mut f_paths = Vec::with_capacity(paths.len());
    let mut scores = Vec::with_capacity(paths.len());
    for h in paths {
        let mut fh = 0.0;
        let mut score = vec![0.0; dim];
        for st in &h.steps {
            let e = evaluate_state(sim, va, layout, st.state, &st.successors, true);
            fh += state_objective(&e, ls);
            let dqa = &e.dq[st.taken];
            for i in 0..dim {
                score[i] += (dqa[i] - e.dbv[i]) / tau;
            }
            let b = penalty(e.g);
            let w = if e.g > 0.0 { ls.lambda } else { 0.0 } + ls.nu * b;
            for i in 0..dim {
                grad[i] += e.dv[i] + w * (e.dbv[i] - e.dv[i]);
            }
        }
        f_paths.push(fh);
        scores.push(score);
    }
    let n = paths.len();
    let total: f64 = f_paths.iter().sum();
    for (fh, score) in f_paths.iter().zip(&scores) {
        let w = if baseline && n > 1 { fh - (total - fh) / (n - 1) as f64 } else { *fh };
        for i in 0..dim {
            grad[i] += score[i] * w;
        }
    }
    for gi in &mut grad {
        *gi /= n as f64;
    }
    grad
}

/// The second term of [`mc_gradient`] alone: `(1/N) Σ_h Σ_t ∇f(x_t)`.
pub fn pathwise_gradient(
    sim: &dyn Simulator,
    va: &ValueApprox,
    layout: &LevelLayout,
    ls: &LagrangianState,
    paths: &[PathSample],
) -> Vec<f64> {
    let dim = layout.dim();
    let mut grad = vec![0.0; dim];
    for h in paths {
        for st in &h.steps {
            let e = evaluate_state(sim, va, layout, st.state, &st.successors, true);
            let w = if e.g > 0.0 { ls.lambda } else { 0.0 } + ls.nu * penalty(e.g);
            for i in 0..dim {
                grad[i] += e.dv[i] + w * (e.dbv[i] - e.dv[i]);
            }
        }
    }
    if !paths.is_empty() {
        for gi in &mut grad {
            *gi /= paths.len() as f64;
        }
    }
    grad
}
