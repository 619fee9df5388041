//! Black-box simulation: the [`Simulator`] contract used by the model-free
//! solver, trajectory sampling and rollout statistics.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::automaton::Mode;
use crate::exact::SoftPolicy;
use crate::mdp::{Action, State};
use crate::product::{PState, ProductMdp};

/// A generative model of the product: metadata plus a sampler. There is no
/// way to read transition probabilities or rewards through this trait.
pub trait Simulator: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn n_modes(&self) -> usize;
    fn n_mdp_states(&self) -> usize;
    fn gamma(&self) -> f64;
    fn tau(&self) -> f64;
    fn available_actions(&self, s: PState) -> &[Action];
    fn mode_of(&self, s: PState) -> Mode;
    fn mdp_state_of(&self, s: PState) -> State;
    fn index_of(&self, s: State, q: Mode) -> Option<PState>;
    fn is_accepting(&self, s: PState) -> bool;
    /// Absorbing and not accepting: the episode has failed.
    fn is_sink(&self, s: PState) -> bool;
    /// Initial product state.
    fn reset(&self) -> PState;
    /// Samples `(next state, reward)`; reward is unamplified.
    fn step(&self, s: PState, a: Action, rng: &mut dyn RngCore) -> (PState, f64);
}

/// Simulator backed by a product MDP. The model is copied into cumulative
/// tables once at construction; stepping never touches the product again.
#[derive(Debug, Clone)]
pub struct ProductSimulator {
    n_actions: usize,
    n_modes: usize,
    n_mdp_states: usize,
    gamma: f64,
    tau: f64,
    initial: PState,
    states: Vec<(State, Mode)>,
    index: Vec<Option<PState>>,
    accepting: Vec<bool>,
    sink: Vec<bool>,
    actions: Vec<Vec<Action>>,
    /// `cdf[s][a]`: successors with cumulative probabilities, plus reward.
    cdf: Vec<Vec<Option<(Vec<(PState, f64)>, f64)>>>,
}

impl ProductSimulator {
    pub fn new(p: &ProductMdp) -> Self {
        let n = p.n_states();
        let mut cdf = Vec::with_capacity(n);
        let mut sink = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let mut rows = Vec::with_capacity(p.n_actions());
            let mut absorbing = true;
            for a in 0..p.n_actions() {
                match p.raw_row(i, a) {
                    None => rows.push(None),
                    Some(r) => {
                        let mut acc = 0.0;
                        let table: Vec<(PState, f64)> = r
                            .next
                            .iter()
                            .filter(|e| e.1 > 0.0)
                            .map(|&(j, pr)| {
                                acc += pr;
                                (j, acc)
                            })
                            .collect();
                        absorbing &= table.len() == 1 && table[0].0 == i;
                        rows.push(Some((table, r.reward)));
                    }
                }
            }
            sink.push(absorbing && !p.is_accepting(i));
            actions.push(p.available_actions(i).collect());
            cdf.push(rows);
        }
        let index = (0..p.n_modes())
            .flat_map(|q| (0..p.n_mdp_states()).map(move |s| (s, q)))
            .map(|(s, q)| p.index_of(s, q))
            .collect();
        Self {
            n_actions: p.n_actions(),
            n_modes: p.n_modes(),
            n_mdp_states: p.n_mdp_states(),
            gamma: p.gamma(),
            tau: p.tau(),
            initial: p.initial(),
            states: (0..n).map(|i| p.state(i)).collect(),
            index,
            accepting: (0..n).map(|i| p.is_accepting(i)).collect(),
            sink,
            actions,
            cdf,
        }
    }
}

impl Simulator for ProductSimulator {
    fn n_states(&self) -> usize {
        self.states.len()
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn n_modes(&self) -> usize {
        self.n_modes
    }
    fn n_mdp_states(&self) -> usize {
        self.n_mdp_states
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn available_actions(&self, s: PState) -> &[Action] {
        &self.actions[s]
    }
    fn mode_of(&self, s: PState) -> Mode {
        self.states[s].1
    }
    fn mdp_state_of(&self, s: PState) -> State {
        self.states[s].0
    }
    fn index_of(&self, s: State, q: Mode) -> Option<PState> {
        if s >= self.n_mdp_states || q >= self.n_modes {
            return None;
        }
        self.index[q * self.n_mdp_states + s]
    }
    fn is_accepting(&self, s: PState) -> bool {
        self.accepting[s]
    }
    fn is_sink(&self, s: PState) -> bool {
        self.sink[s]
    }
    fn reset(&self) -> PState {
        self.initial
    }
    fn step(&self, s: PState, a: Action, rng: &mut dyn RngCore) -> (PState, f64) {
        let (table, reward) = self.cdf[s][a].as_ref().expect("available action");
        let u: f64 = rng.gen::<f64>() * table.last().map_or(1.0, |e| e.1);
        let next = table
            .iter()
            .find(|e| u < e.1)
            .or(table.last())
            .map(|e| e.0)
            .expect("nonempty row");
        (next, *reward)
    }
}

/// Anything that can pick an action at a product state.
pub trait Policy: Sync {
    fn sample_action(&self, s: PState, rng: &mut dyn RngCore) -> Action;
}

impl Policy for SoftPolicy {
    fn sample_action(&self, s: PState, rng: &mut dyn RngCore) -> Action {
        self.sample(s, rng.gen::<f64>())
    }
}

/// Independent stream `index` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Accepting,
    Sink,
    LengthCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub state: PState,
    pub action: Action,
    pub reward: f64,
    pub next: PState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub start: PState,
    pub steps: Vec<Step>,
    pub terminated: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Visited states, including the start and the final state.
    pub fn states(&self) -> Vec<PState> {
        let mut out = vec![self.start];
        out.extend(self.steps.iter().map(|s| s.next));
        out
    }

    /// CSV lines `t,state,action,reward,next` for debugging dumps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state,action,reward,next\n");
        for (t, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{t},{},{},{:.6},{}\n", s.state, s.action, s.reward, s.next));
        }
        out
    }
}

/// Rolls `policy` from `start` for at most `max_len` steps, stopping early on
/// an accepting or sink state.
pub fn sample_trajectory(
    sim: &dyn Simulator,
    policy: &dyn Policy,
    start: PState,
    max_len: usize,
    rng: &mut dyn RngCore,
) -> Trajectory {
    let mut steps = Vec::new();
    let mut s = start;
    let terminated = loop {
        if sim.is_accepting(s) {
            break Termination::Accepting;
        }
        if sim.is_sink(s) {
            break Termination::Sink;
        }
        if steps.len() >= max_len {
            break Termination::LengthCap;
        }
        let a = policy.sample_action(s, rng);
        let (next, reward) = sim.step(s, a, rng);
        steps.push(Step {
            state: s,
            action: a,
            reward,
            next,
        });
        s = next;
    };
    Trajectory {
        start,
        steps,
        terminated,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutStats {
    pub n_runs: usize,
    pub successes: usize,
    pub failures_sink: usize,
    pub failures_timeout: usize,
    pub success_rate: f64,
}

/// `n_runs` independent rollouts with per-run streams `(seed, run index)`.
pub fn simulate_policy(
    sim: &dyn Simulator,
    policy: &dyn Policy,
    start: PState,
    n_runs: usize,
    step_cap: usize,
    seed: u64,
) -> RolloutStats {
    let outcomes: Vec<Termination> = (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_stream(seed, k as u64);
            sample_trajectory(sim, policy, start, step_cap, &mut rng).terminated
        })
        .collect();
    let count = |t: Termination| outcomes.iter().filter(|&&o| o == t).count();
    let successes = count(Termination::Accepting);
    RolloutStats {
        n_runs,
        successes,
        failures_sink: count(Termination::Sink),
        failures_timeout: count(Termination::LengthCap),
        success_rate: if n_runs == 0 { 0.0 } else { successes as f64 / n_runs as f64 },
    }
}
