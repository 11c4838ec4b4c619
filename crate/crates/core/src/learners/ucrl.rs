use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Learner;

pub const DEFAULT_CONFIDENCE: f64 = 0.05;

/// Stopping tolerance on the span of successive value differences.
const EVI_TOL: f64 = 1e-4;
const EVI_MAX_ITERS: usize = 100_000;
/// Self-loop mixing that makes every optimistic chain aperiodic without
/// changing its optimal policies.
const APERIODIC_MIX: f64 = 0.95;
const TIE_TOL: f64 = 1e-10;

/// Episodic optimistic learner for the average-reward criterion.
///
/// Each episode plans by extended value iteration over all MDPs
/// compatible with the confidence sets, then follows that policy until
/// the visit count of some state-action pair has doubled.
#[derive(Debug, Clone)]
pub struct Ucrl {
    n_states: usize,
    n_actions: usize,
    confidence: f64,
    t: u64,
    /// Counts at the start of the current episode.
    episode_base: Vec<u64>,
    counts: Vec<u64>,
    in_episode: Vec<u64>,
    reward_sum: Vec<f64>,
    next_counts: Vec<u64>,
    reward_range: Option<(f64, f64)>,
    policy: Vec<usize>,
    replan: bool,
    episodes: u64,
    optimistic_gain: f64,
    rng: ChaCha8Rng,
}

impl Ucrl {
    pub fn new(n_states: usize, n_actions: usize, confidence: f64, seed: u64) -> Self {
        let pairs = n_states * n_actions;
        Ucrl {
            n_states,
            n_actions,
            confidence,
            t: 0,
            episode_base: vec![0; pairs],
            counts: vec![0; pairs],
            in_episode: vec![0; pairs],
            reward_sum: vec![0.0; pairs],
            next_counts: vec![0; pairs * n_states],
            reward_range: None,
            policy: vec![0; n_states],
            replan: true,
            episodes: 0,
            optimistic_gain: f64::NAN,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Gain of the optimistic model at the last planning step.
    pub fn optimistic_gain(&self) -> f64 {
        self.optimistic_gain
    }

    pub fn policy(&self) -> &[usize] {
        &self.policy
    }

    fn plan(&mut self) {
        let (ns, na) = (self.n_states, self.n_actions);
        let t_k = self.t.max(1) as f64;
        let log_term = (2.0 * (ns * na) as f64 * t_k / self.confidence).ln();
        let (r_lo, r_hi) = self.reward_range.unwrap_or((0.0, 0.0));
        let span = (r_hi - r_lo).max(1e-12);

        // Optimistic rewards, empirical rows and L1 radii.
        let mut r_opt = vec![0.0; ns * na];
        let mut p_hat = vec![0.0; ns * na * ns];
        let mut radius = vec![2.0; ns * na];
        for i in 0..ns * na {
            let n = self.counts[i];
            let row = &mut p_hat[i * ns..(i + 1) * ns];
            if n == 0 {
                r_opt[i] = r_hi + span;
                row.fill(1.0 / ns as f64);
                continue;
            }
            let nf = n as f64;
            r_opt[i] = self.reward_sum[i] / nf + span * (log_term / (2.0 * nf)).sqrt();
            for (p, &c) in row.iter_mut().zip(&self.next_counts[i * ns..(i + 1) * ns]) {
                *p = c as f64 / nf;
            }
            radius[i] = (2.0 * (ns as f64 * 2f64.ln() + log_term) / nf).sqrt().min(2.0);
        }

        let mut u: Vec<f64> = vec![0.0; ns];
        let mut next = vec![0.0; ns];
        let mut best_action = vec![0usize; ns];
        let mut order: Vec<usize> = (0..ns).collect();
        let mut p = vec![0.0; ns];
        let mut gain = f64::NAN;
        for _ in 0..EVI_MAX_ITERS {
            order.sort_by(|&x, &y| u[y].total_cmp(&u[x]));
            for s in 0..ns {
                let mut best = f64::NEG_INFINITY;
                let mut candidates: Vec<usize> = Vec::new();
                for a in 0..na {
                    let i = s * na + a;
                    optimistic_row(&p_hat[i * ns..(i + 1) * ns], radius[i], &order, &mut p);
                    let future: f64 = p.iter().zip(&u).map(|(p, u)| p * u).sum();
                    let value = r_opt[i] + APERIODIC_MIX * future + (1.0 - APERIODIC_MIX) * u[s];
                    if value > best + TIE_TOL {
                        best = value;
                        candidates.clear();
                        candidates.push(a);
                    } else if value >= best - TIE_TOL {
                        candidates.push(a);
                    }
                }
                next[s] = best;
                best_action[s] = if candidates.len() == 1 {
                    candidates[0]
                } else {
                    candidates[self.rng.random_range(0..candidates.len())]
                };
            }
            let (lo, hi) = next
                .iter()
                .zip(&u)
                .map(|(n, u)| n - u)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
            gain = 0.5 * (lo + hi);
            let base = next[0];
            for (u, n) in u.iter_mut().zip(&next) {
                *u = n - base;
            }
            if hi - lo < EVI_TOL {
                break;
            }
        }
        self.policy.copy_from_slice(&best_action);
        self.optimistic_gain = gain;
        self.episode_base.copy_from_slice(&self.counts);
        self.in_episode.fill(0);
        self.episodes += 1;
        self.replan = false;
    }
}

/// Most optimistic row within L1 distance `radius` of `p_hat`: extra mass
/// on the best state, taken from the worst ones. `order` lists states by
/// decreasing value.
fn optimistic_row(p_hat: &[f64], radius: f64, order: &[usize], out: &mut [f64]) {
    out.copy_from_slice(p_hat);
    let top = order[0];
    out[top] = (p_hat[top] + radius / 2.0).min(1.0);
    let mut excess: f64 = out.iter().sum::<f64>() - 1.0;
    for &j in order.iter().rev() {
        if excess <= 0.0 {
            break;
        }
        if j == top {
            continue;
        }
        let take = excess.min(out[j]);
        out[j] -= take;
        excess -= take;
    }
}

impl Learner for Ucrl {
    fn act(&mut self, state: usize) -> usize {
        if self.replan {
            self.plan();
        }
        self.policy[state]
    }

    fn observe(&mut self, state: usize, action: usize, reward: f64, next_state: usize) {
        let i = state * self.n_actions + action;
        self.t += 1;
        self.counts[i] += 1;
        self.in_episode[i] += 1;
        self.reward_sum[i] += reward;
        self.next_counts[i * self.n_states + next_state] += 1;
        self.reward_range = Some(match self.reward_range {
            None => (reward, reward),
            Some((lo, hi)) => (lo.min(reward), hi.max(reward)),
        });
        if self.in_episode[i] >= self.episode_base[i].max(1) {
            self.replan = true;
        }
    }
}
