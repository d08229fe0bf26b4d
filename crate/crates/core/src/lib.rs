//! Tabular reinforcement learning under constant observation delay.
//!
//! The base MDP lives in [`mdp`]; [`augmentation`] lifts it to the
//! delay-augmented MDP over `(last observed state, pending actions)`.
//! [`exact_solvers`] and [`soft_solvers`] solve the lifted problem directly
//! or through a shorter auxiliary delay, [`learners`] trains sample-based
//! agents on the online delayed environment, and [`analysis`] evaluates the
//! identities and bounds relating the two delays.

pub mod analysis;
pub mod augmentation;
pub mod envs;
pub mod error;
pub mod exact_solvers;
pub mod learners;
pub mod mdp;
pub mod soft_solvers;

pub use augmentation::{AugSpace, AugState, BeliefDist, Cdmdp, DelayedEnv};
pub use error::{Error, Result};
pub use exact_solvers::QTable;
pub use mdp::{FiniteMdp, TabularMdp, TabularPolicy};
