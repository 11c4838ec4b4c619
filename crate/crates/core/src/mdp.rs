//! Tabular MDPs, deterministic policies, and structural validation.
//!
//! `gamma == 1` selects the average-reward criterion, `gamma < 1` the
//! discounted one. Both share the same score / Bellman machinery in
//! [`crate::analysis`].

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row-stochasticity and initial-distribution checks.
pub const INPUT_TOL: f64 = 1e-12;

/// A tabular MDP `(S, A, R, P, gamma, d0)`.
///
/// Rewards are stored row-major as `[s * n_actions + a]`, transitions as
/// `[(s * n_actions + a) * n_states + s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
}

/// A deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Policy(actions)
    }

    /// The policy playing `action` everywhere.
    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy(vec![action; n_states])
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `pi<s; a>`: identical to `self` except that state `s` plays `a`.
    pub fn neighbor(&self, s: usize, a: usize) -> Policy {
        let mut actions = self.0.clone();
        actions[s] = a;
        Policy(actions)
    }

    /// All proper neighbors `(s, a, pi<s; a>)` with `a != pi(s)`, in
    /// state-major order.
    pub fn neighbors(&self, n_actions: usize) -> impl Iterator<Item = (usize, usize, Policy)> + '_ {
        (0..self.0.len()).flat_map(move |s| {
            (0..n_actions)
                .filter(move |&a| a != self.0[s])
                .map(move |a| (s, a, self.neighbor(s, a)))
        })
    }

    pub fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.0.len() != mdp.n_states() {
            return Err(Error::InvalidPolicy(format!(
                "policy has {} entries, MDP has {} states",
                self.0.len(),
                mdp.n_states()
            )));
        }
        if let Some((s, &a)) = self.0.iter().enumerate().find(|(_, &a)| a >= mdp.n_actions()) {
            return Err(Error::InvalidPolicy(format!(
                "action {a} at state {s} out of range (n_actions = {})",
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

impl Mdp {
    /// Builds an MDP from flat row-major buffers, checking shapes and
    /// stochasticity. Ergodicity is checked separately by [`validate_mdp`].
    pub fn from_flat(
        n_states: usize,
        n_actions: usize,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::MalformedMdp("empty state or action set".into()));
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::MalformedMdp(format!(
                "expected {} rewards, got {}",
                n_states * n_actions,
                rewards.len()
            )));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::MalformedTransitions(format!(
                "expected {} entries, got {}",
                n_states * n_actions * n_states,
                transitions.len()
            )));
        }
        if initial_dist.len() != n_states {
            return Err(Error::MalformedMdp(format!(
                "initial distribution has {} entries, expected {n_states}",
                initial_dist.len()
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::MalformedMdp(format!("gamma = {gamma} outside (0, 1]")));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::MalformedMdp(format!("non-finite reward {r}")));
        }
        let mdp = Mdp {
            n_states,
            n_actions,
            rewards,
            transitions,
            gamma,
            initial_dist,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(mdp.row(s, a)).map_err(|e| {
                    Error::MalformedTransitions(format!("row ({s}, {a}): {e}"))
                })?;
            }
        }
        check_distribution(&mdp.initial_dist)
            .map_err(|e| Error::MalformedMdp(format!("initial distribution: {e}")))?;
        Ok(mdp)
    }

    /// Builds an MDP from nested `rewards[s][a]` and `transitions[s][a][s']`.
    pub fn from_nested(
        rewards: &[Vec<f64>],
        transitions: &[Vec<Vec<f64>>],
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let n_states = rewards.len();
        let n_actions = rewards.first().map_or(0, Vec::len);
        if transitions.len() != n_states {
            return Err(Error::MalformedTransitions(format!(
                "{} transition blocks for {n_states} states",
                transitions.len()
            )));
        }
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rewards.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::MalformedMdp(format!("ragged reward row {s}")));
            }
            flat_r.extend_from_slice(row);
        }
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, block) in transitions.iter().enumerate() {
            if block.len() != n_actions {
                return Err(Error::MalformedTransitions(format!("ragged transition block {s}")));
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::MalformedTransitions(format!(
                        "row ({s}, {a}) has {} entries",
                        row.len()
                    )));
                }
                flat_p.extend_from_slice(row);
            }
        }
        Self::from_flat(n_states, n_actions, flat_r, flat_p, gamma, initial_dist)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_average_reward(&self) -> bool {
        self.gamma == 1.0
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Next-state distribution `P(s, a, .)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Replaces `R(s, a)`. The caller keeps rewards finite.
    pub fn set_reward(&mut self, s: usize, a: usize, r: f64) {
        self.rewards[s * self.n_actions + a] = r;
    }

    /// Replaces `P(s, a, .)`; the row must be a probability vector.
    pub fn set_row(&mut self, s: usize, a: usize, row: &[f64]) -> Result<()> {
        if row.len() != self.n_states {
            return Err(Error::ShapeMismatch(format!(
                "row of length {} for {} states",
                row.len(),
                self.n_states
            )));
        }
        check_distribution(row)
            .map_err(|e| Error::MalformedTransitions(format!("row ({s}, {a}): {e}")))?;
        let start = (s * self.n_actions + a) * self.n_states;
        self.transitions[start..start + self.n_states].copy_from_slice(row);
        Ok(())
    }

    /// Copy of this MDP with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::from_flat(
            self.n_states,
            self.n_actions,
            self.rewards.clone(),
            self.transitions.clone(),
            gamma,
            self.initial_dist.clone(),
        )
    }

    /// Transition matrix `P_pi[s][s'] = P(s, pi(s), s')` in row-major order.
    pub fn policy_matrix(&self, pi: &Policy) -> Vec<f64> {
        let n = self.n_states;
        let mut out = Vec::with_capacity(n * n);
        for s in 0..n {
            out.extend_from_slice(self.row(s, pi.action(s)));
        }
        out
    }

    /// Reward vector `R(s, pi(s))`.
    pub fn policy_rewards(&self, pi: &Policy) -> Vec<f64> {
        (0..self.n_states).map(|s| self.reward(s, pi.action(s))).collect()
    }

    pub fn same_shape(&self, other: &Mdp) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.gamma == other.gamma
            && self.initial_dist == other.initial_dist
    }

    pub fn to_file(&self, target_policy: Option<&Policy>) -> EnvFile {
        let s = self.n_states;
        let a = self.n_actions;
        EnvFile {
            n_states: s,
            n_actions: a,
            gamma: self.gamma,
            d0: self.initial_dist.clone(),
            rewards: (0..s).map(|i| self.rewards[i * a..(i + 1) * a].to_vec()).collect(),
            transitions: (0..s)
                .map(|i| (0..a).map(|j| self.row(i, j).to_vec()).collect())
                .collect(),
            target_policy: target_policy.map(|p| p.actions().to_vec()),
        }
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("invalid probability {p}"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > INPUT_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// On-disk environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub d0: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_policy: Option<Vec<usize>>,
}

impl EnvFile {
    pub fn into_mdp(self) -> Result<(Mdp, Option<Policy>)> {
        if self.rewards.len() != self.n_states || self.rewards.iter().any(|r| r.len() != self.n_actions) {
            return Err(Error::MalformedMdp(format!(
                "rewards do not match declared shape {}x{}",
                self.n_states, self.n_actions
            )));
        }
        let mdp = Mdp::from_nested(&self.rewards, &self.transitions, self.gamma, self.d0)?;
        let target = match self.target_policy {
            Some(actions) => {
                let pi = Policy::new(actions);
                pi.check_against(&mdp)?;
                Some(pi)
            }
            None => None,
        };
        Ok((mdp, target))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Outcome of [`validate_mdp`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub irreducible: bool,
    pub period: usize,
}

/// Confirms the structural invariants and that the uniform-random policy
/// induces an irreducible, aperiodic chain.
pub fn validate_mdp(m: &Mdp) -> Result<ValidationReport> {
    let n = m.n_states();
    let successors: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            (0..n)
                .filter(|&next| (0..m.n_actions()).any(|a| m.prob(s, a, next) > 0.0))
                .collect()
        })
        .collect();
    let mut predecessors = vec![Vec::new(); n];
    for (s, succ) in successors.iter().enumerate() {
        for &next in succ {
            predecessors[next].push(s);
        }
    }
    let forward = bfs_levels(&successors, 0);
    let backward = bfs_levels(&predecessors, 0);
    if let Some(s) = (0..n).find(|&s| forward[s].is_none() || backward[s].is_none()) {
        return Err(Error::NotErgodic(format!(
            "support graph is reducible (state {s} not strongly connected to state 0)"
        )));
    }
    let mut period = 0usize;
    for (s, succ) in successors.iter().enumerate() {
        let ls = forward[s].unwrap();
        for &next in succ {
            let ln = forward[next].unwrap();
            period = gcd(period, (ls + 1).abs_diff(ln));
        }
    }
    if period != 1 {
        return Err(Error::NotErgodic(format!("support graph has period {period}")));
    }
    Ok(ValidationReport {
        n_states: n,
        n_actions: m.n_actions(),
        irreducible: true,
        period,
    })
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
