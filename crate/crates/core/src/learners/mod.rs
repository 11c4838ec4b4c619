//! Victim learners and the attacker's bookkeeping of mismatches and cost.

mod qlearning;
mod ucrl;

pub use qlearning::QLearner;
pub use ucrl::Ucrl;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Policy;

/// A tabular online learner. It only ever sees `(s, a, r, s')`.
pub trait Learner: Send {
    fn act(&mut self, state: usize) -> usize;
    fn observe(&mut self, state: usize, action: usize, reward: f64, next_state: usize);
}

/// Learner choice with its tunables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Ucrl {
        #[serde(default = "default_confidence")]
        confidence: f64,
    },
    #[serde(rename = "qlearn")]
    QLearning {
        #[serde(default = "default_exploration")]
        exploration: f64,
        #[serde(default = "default_lr_exponent")]
        lr_exponent: f64,
    },
}

fn default_confidence() -> f64 {
    ucrl::DEFAULT_CONFIDENCE
}

fn default_exploration() -> f64 {
    qlearning::DEFAULT_EXPLORATION
}

fn default_lr_exponent() -> f64 {
    qlearning::DEFAULT_LR_EXPONENT
}

impl LearnerKind {
    pub fn ucrl() -> Self {
        LearnerKind::Ucrl { confidence: default_confidence() }
    }

    pub fn qlearning() -> Self {
        LearnerKind::QLearning { exploration: default_exploration(), lr_exponent: default_lr_exponent() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LearnerKind::Ucrl { confidence } if !(confidence > 0.0 && confidence < 1.0) => {
                Err(Error::InvalidConfig(format!("UCRL confidence must lie in (0, 1), got {confidence}")))
            }
            LearnerKind::QLearning { exploration, .. } if !(0.0..=1.0).contains(&exploration) => {
                Err(Error::InvalidConfig(format!("exploration must lie in [0, 1], got {exploration}")))
            }
            LearnerKind::QLearning { lr_exponent, .. } if !(lr_exponent > 0.5 && lr_exponent <= 1.0) => {
                Err(Error::InvalidConfig(format!("learning rate exponent must lie in (0.5, 1], got {lr_exponent}")))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Box<dyn Learner> {
        match *self {
            LearnerKind::Ucrl { confidence } => Box::new(Ucrl::new(n_states, n_actions, confidence, seed)),
            LearnerKind::QLearning { exploration, lr_exponent } => Box::new(
                QLearner::new(n_states, n_actions, gamma, exploration, seed).with_lr_exponent(lr_exponent),
            ),
        }
    }
}

/// Running attack metrics over a horizon.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    pub t: u64,
    pub mismatch_count: u64,
    /// Steps whose action no near-optimal policy uses, when a mask is set.
    pub subopt_count: u64,
    pub cum_reward: f64,
    p: f64,
    /// `sum c_t^p`, or `max c_t` when `p = inf`.
    cost_acc: f64,
    /// Row-major `[s * n_actions + a]`: action allowed by some
    /// near-optimal policy.
    near_optimal: Option<(Vec<bool>, usize)>,
}

impl MetricsAccumulator {
    pub fn new(p: f64) -> Self {
        MetricsAccumulator {
            t: 0,
            mismatch_count: 0,
            subopt_count: 0,
            cum_reward: 0.0,
            p,
            cost_acc: 0.0,
            near_optimal: None,
        }
    }

    pub fn with_near_optimal(mut self, mask: Vec<bool>, n_actions: usize) -> Self {
        self.near_optimal = Some((mask, n_actions));
        self
    }

    pub fn record_step(&mut self, state: usize, action: usize, target: &Policy, step_cost: f64, reward: f64) {
        if let Some((mask, na)) = &self.near_optimal {
            if !mask[state * na + action] {
                self.subopt_count += 1;
            }
        }
        self.record(action == target.action(state), step_cost, reward);
    }

    /// Same as [`record_step`](Self::record_step) with the match decided
    /// by the caller.
    pub fn record(&mut self, matched: bool, step_cost: f64, reward: f64) {
        self.t += 1;
        if !matched {
            self.mismatch_count += 1;
        }
        if self.p.is_infinite() {
            self.cost_acc = self.cost_acc.max(step_cost);
        } else if step_cost != 0.0 {
            self.cost_acc += step_cost.powf(self.p);
        }
        self.cum_reward += reward;
    }

    pub fn avg_miss(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.mismatch_count as f64 / self.t as f64
        }
    }

    /// `(1/T) (sum c_t^p)^{1/p}`.
    pub fn avg_cost(&self) -> f64 {
        if self.t == 0 {
            return 0.0;
        }
        let norm = if self.p.is_infinite() {
            self.cost_acc
        } else {
            self.cost_acc.powf(1.0 / self.p)
        };
        norm / self.t as f64
    }

    /// `rho* T - sum r_t`.
    pub fn regret(&self, rho_star: f64) -> f64 {
        rho_star * self.t as f64 - self.cum_reward
    }

    pub fn subopt(&self) -> Option<u64> {
        self.near_optimal.as_ref().map(|_| self.subopt_count)
    }
}
