use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Learner;

pub const DEFAULT_EXPLORATION: f64 = 0.001;

/// Step size exponent: `lr = (1 + visits)^-0.55`. Larger exponents
/// leave the chain at `gamma = 0.99` far from converged after millions
/// of steps; anything at or below 0.5 breaks the usual step-size
/// conditions.
pub const DEFAULT_LR_EXPONENT: f64 = 0.55;

/// Tabular Q-learning with constant-rate uniform exploration.
#[derive(Debug, Clone)]
pub struct QLearner {
    n_actions: usize,
    gamma: f64,
    exploration: f64,
    lr_exponent: f64,
    q: Vec<f64>,
    visits: Vec<u64>,
    rng: ChaCha8Rng,
}

impl QLearner {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64, exploration: f64, seed: u64) -> Self {
        QLearner {
            n_actions,
            gamma,
            exploration,
            lr_exponent: DEFAULT_LR_EXPONENT,
            q: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Overrides the step size exponent; must lie in `(0.5, 1]`.
    pub fn with_lr_exponent(mut self, exponent: f64) -> Self {
        self.lr_exponent = exponent;
        self
    }

    /// Starts from the given Q table instead of zeros.
    pub fn with_q(mut self, q: Vec<f64>) -> Self {
        assert_eq!(q.len(), self.q.len(), "Q table shape");
        self.q = q;
        self
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    /// Lowest-index maximizer.
    pub fn greedy(&self, state: usize) -> usize {
        let row = &self.q[state * self.n_actions..(state + 1) * self.n_actions];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    fn max_q(&self, state: usize) -> f64 {
        self.q[state * self.n_actions..(state + 1) * self.n_actions]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Learner for QLearner {
    fn act(&mut self, state: usize) -> usize {
        if self.exploration > 0.0 && self.rng.random::<f64>() < self.exploration {
            self.rng.random_range(0..self.n_actions)
        } else {
            self.greedy(state)
        }
    }

    fn observe(&mut self, state: usize, action: usize, reward: f64, next_state: usize) {
        let i = state * self.n_actions + action;
        let lr = (1.0 + self.visits[i] as f64).powf(-self.lr_exponent);
        self.visits[i] += 1;
        let target = reward + self.gamma * self.max_q(next_state);
        self.q[i] += lr * (target - self.q[i]);
    }
}
