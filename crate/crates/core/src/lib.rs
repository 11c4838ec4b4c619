//! Environment-poisoning attacks against tabular reinforcement-learning
//! agents.
//!
//! The crate covers exact MDP analysis ([`analysis`]), a small dense LP
//! engine ([`linprog`]), offline and online attack synthesis ([`attack`]),
//! victim learners ([`learners`]), the online attack loop
//! ([`simulation`]), and experiment orchestration ([`harness`]).

pub mod analysis;
pub mod attack;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learners;
mod linalg;
pub mod linprog;
pub mod mdp;
pub mod simulation;

pub use error::{Error, Result};
pub use mdp::{Mdp, Policy};
