//! Planning in labeled MDPs under co-safe temporal-logic tasks.
//!
//! The pipeline is: load a [`automaton::TaskDfa`] and a [`mdp::LabeledMdp`]
//! (or build one with [`grid::build_grid_world`]), form the
//! [`product::ProductMdp`], split the automaton into meta-modes and level sets
//! with [`decomposition::decompose`], then solve with exact value iteration
//! ([`exact`]) or the model-free level-ordered ADP solver ([`adp`]).
//! [`sim`] holds the black-box simulator contract, rollouts and benchmarks.

pub mod adp;
pub mod automaton;
pub mod bench;
pub mod decomposition;
pub mod exact;
pub mod export;
pub mod grid;
pub mod mdp;
pub mod product;
pub mod scc;
pub mod sim;

pub use automaton::{parse_dfa, PropSet, TaskDfa};
pub use decomposition::{decompose, Decomposition};
pub use grid::{build_grid_world, GridWorld, GridWorldSpec};
pub use mdp::LabeledMdp;
pub use product::{build_product, ProductMdp};
