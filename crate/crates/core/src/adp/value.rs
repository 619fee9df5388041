//! Per-mode linear value approximations over a shared kernel basis.

use serde::Serialize;

use super::kernel::KernelBasis;
use crate::automaton::Mode;
use crate::exact::BoundaryConvention;
use crate::mdp::State;
use crate::product::PState;
use crate::sim::Simulator;

/// How the value of one automaton mode is represented.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModeValue {
    /// `V(s, q) = φ(s)·θ_q`.
    Learned(Vec<f64>),
    /// Same value everywhere in the mode (accepting or dropped modes).
    Constant(f64),
}

/// `V(s, q)` for every mode, plus the boundary convention: accepting product
/// states read `α` (pinned) or 0 (reward on entry); sinks read 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueApprox {
    basis: KernelBasis,
    modes: Vec<ModeValue>,
    alpha: f64,
    boundary: BoundaryConvention,
}

impl ValueApprox {
    pub fn new(basis: KernelBasis, modes: Vec<ModeValue>, alpha: f64, boundary: BoundaryConvention) -> Self {
        for m in &modes {
            if let ModeValue::Learned(theta) = m {
                assert_eq!(theta.len(), basis.n_features(), "θ length must match the basis");
            }
        }
        Self { basis, modes, alpha, boundary }
    }

    pub fn boundary(&self) -> BoundaryConvention {
        self.boundary
    }

    /// Value read at accepting product states.
    pub fn accepting_value(&self) -> f64 {
        match self.boundary {
            BoundaryConvention::PinnedAccepting => self.alpha,
            BoundaryConvention::RewardOnEntry => 0.0,
        }
    }

    /// Multiplier on sampled step rewards.
    pub fn reward_scale(&self) -> f64 {
        match self.boundary {
            BoundaryConvention::PinnedAccepting => 0.0,
            BoundaryConvention::RewardOnEntry => self.alpha,
        }
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, q: Mode) -> &ModeValue {
        &self.modes[q]
    }

    pub fn theta(&self, q: Mode) -> Option<&[f64]> {
        match &self.modes[q] {
            ModeValue::Learned(t) => Some(t),
            ModeValue::Constant(_) => None,
        }
    }

    pub fn theta_mut(&mut self, q: Mode) -> Option<&mut [f64]> {
        match &mut self.modes[q] {
            ModeValue::Learned(t) => Some(t),
            ModeValue::Constant(_) => None,
        }
    }

    /// Mode value at MDP state `s`, ignoring accepting and sink pinning.
    pub fn mode_value(&self, s: State, q: Mode) -> f64 {
        match &self.modes[q] {
            ModeValue::Learned(t) => dot(self.basis.features(s), t),
            ModeValue::Constant(c) => *c,
        }
    }

    /// Value of product state `x`.
    pub fn value(&self, sim: &dyn Simulator, x: PState) -> f64 {
        if sim.is_accepting(x) {
            self.accepting_value()
        } else if sim.is_sink(x) {
            0.0
        } else {
            self.mode_value(sim.mdp_state_of(x), sim.mode_of(x))
        }
    }

    /// Values of every product state.
    pub fn values(&self, sim: &dyn Simulator) -> Vec<f64> {
        (0..sim.n_states()).map(|x| self.value(sim, x)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameter layout of one level: the learned modes, each owning a block of
/// `n_features` consecutive entries in the flattened gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLayout {
    modes: Vec<Mode>,
    block: Vec<Option<usize>>,
    n_features: usize,
}

impl LevelLayout {
    pub fn new(modes: Vec<Mode>, n_modes: usize, n_features: usize) -> Self {
        let mut block = vec![None; n_modes];
        for (k, &q) in modes.iter().enumerate() {
            assert!(block[q].is_none(), "duplicate mode in level");
            block[q] = Some(k);
        }
        Self { modes, block, n_features }
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn contains(&self, q: Mode) -> bool {
        self.block[q].is_some()
    }

    pub fn dim(&self) -> usize {
        self.modes.len() * self.n_features
    }

    /// Offset of mode `q`'s block, if `q` is learned in this level.
    pub fn offset(&self, q: Mode) -> Option<usize> {
        self.block[q].map(|k| k * self.n_features)
    }

    /// Flattened parameters of this level.
    pub fn gather(&self, va: &ValueApprox) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for &q in &self.modes {
            out.extend_from_slice(va.theta(q).expect("level modes are learned"));
        }
        out
    }

    /// Writes flattened parameters back. Only this level's modes are touched.
    pub fn scatter(&self, va: &mut ValueApprox, flat: &[f64]) {
        assert_eq!(flat.len(), self.dim());
        for (k, &q) in self.modes.iter().enumerate() {
            let t = va.theta_mut(q).expect("level modes are learned");
            t.copy_from_slice(&flat[k * self.n_features..(k + 1) * self.n_features]);
        }
    }
}
