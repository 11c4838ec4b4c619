//! Built-in environments: the left/right chain and the nine-state
//! navigation layout.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};

/// Probability that an action moves as intended.
pub const SUCCESS_PROB: f64 = 0.9;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

const NAVIGATION_JSON: &str = include_str!("../envs/navigation.json");

/// Mixes an intended successor with a uniform jump.
fn noisy_row(n: usize, intended: usize, success: f64) -> Vec<f64> {
    let mut row = vec![(1.0 - success) / n as f64; n];
    row[intended] += success;
    row
}

/// The four-state chain with average-reward criterion; target is
/// always-right.
pub fn build_chain(reward_s0: f64) -> (Mdp, Policy) {
    build_chain_n(reward_s0, 4, 1.0).expect("the four-state chain is well formed")
}

/// An `n`-state chain: `s0` pays `reward_s0`, the last state `-0.5`, every
/// other state `0.5`. Moves are blocked at both ends.
pub fn build_chain_n(reward_s0: f64, n: usize, gamma: f64) -> Result<(Mdp, Policy)> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("chain needs at least 2 states, got {n}")));
    }
    let rewards: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let r = match s {
                0 => reward_s0,
                s if s == n - 1 => -0.5,
                _ => 0.5,
            };
            vec![r, r]
        })
        .collect();
    let transitions: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            vec![noisy_row(n, left, SUCCESS_PROB), noisy_row(n, right, SUCCESS_PROB)]
        })
        .collect();
    let mdp = Mdp::from_nested(&rewards, &transitions, gamma, vec![1.0 / n as f64; n])?;
    Ok((mdp, Policy::constant(n, RIGHT)))
}

#[derive(Deserialize)]
struct Layout {
    success_prob: f64,
    /// `null` marks the parameterized reward of `s0`.
    rewards: Vec<Option<f64>>,
    successors: Vec<Vec<usize>>,
    target_policy: Vec<usize>,
}

/// The navigation layout with average-reward criterion.
pub fn build_navigation(reward_s0: f64) -> (Mdp, Policy) {
    build_navigation_with(reward_s0, 1.0).expect("the bundled navigation layout is well formed")
}

pub fn build_navigation_with(reward_s0: f64, gamma: f64) -> Result<(Mdp, Policy)> {
    let layout: Layout = serde_json::from_str(NAVIGATION_JSON)?;
    let n = layout.rewards.len();
    let rewards: Vec<Vec<f64>> = layout
        .rewards
        .iter()
        .map(|r| {
            let r = r.unwrap_or(reward_s0);
            vec![r; layout.successors[0].len()]
        })
        .collect();
    let transitions: Vec<Vec<Vec<f64>>> = layout
        .successors
        .iter()
        .map(|succ| succ.iter().map(|&next| noisy_row(n, next, layout.success_prob)).collect())
        .collect();
    let mdp = Mdp::from_nested(&rewards, &transitions, gamma, vec![1.0 / n as f64; n])?;
    let target = Policy::new(layout.target_policy);
    target.check_against(&mdp)?;
    Ok((mdp, target))
}
