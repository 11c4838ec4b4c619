//! Exact policy analysis on a tabular MDP: state distributions, scores,
//! (shifted) value functions, discounted reach times, the Hajnal overlap
//! coefficient, planning, and epsilon-robust optimality checks.
//!
//! Every quantity is obtained from a dense linear solve; nothing here
//! iterates to a tolerance except policy iteration's outer loop.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{Mdp, Policy};

/// Largest policy space the brute-force oracles will enumerate.
pub const ORACLE_POLICY_CAP: u128 = 1_000_000;

/// Score, state distribution and shifted values of one policy.
#[derive(Debug, Clone, Serialize)]
pub struct ValueBundle {
    /// `rho^pi = sum_s mu(s) R(s, pi(s))`.
    pub score: f64,
    pub state_dist: Vec<f64>,
    /// Shifted values; for `gamma < 1` these are the standard values minus
    /// `rho / (1 - gamma)`, for `gamma = 1` the bias with `mu^T V = 0`.
    pub v_values: Vec<f64>,
    /// Row-major `[s * n_actions + a]`.
    pub q_values: Vec<f64>,
    /// Unshifted discounted values; `None` in the average-reward regime.
    pub v_standard: Option<Vec<f64>>,
    n_actions: usize,
}

impl ValueBundle {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_values[s * self.n_actions + a]
    }

    pub fn v(&self, s: usize) -> f64 {
        self.v_values[s]
    }

    /// `max_s V(s) - min_s V(s)`.
    pub fn value_span(&self) -> f64 {
        let max = self.v_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.v_values.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Discounted expected hitting times `T^pi(s, s')` and their maximum.
#[derive(Debug, Clone, Serialize)]
pub struct ReachTimes {
    /// Row-major `[s * n_states + s']`.
    pub times: Vec<f64>,
    pub diameter: f64,
    n_states: usize,
}

impl ReachTimes {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.times[from * self.n_states + to]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
}

fn policy_dm(m: &Mdp, pi: &Policy) -> DMatrix<f64> {
    let n = m.n_states();
    DMatrix::from_row_slice(n, n, &m.policy_matrix(pi))
}

/// Solves the flow equations
/// `mu(s) = (1 - gamma) d0(s) + gamma sum_s' P(s', pi(s'), s) mu(s')`,
/// pinned by `sum mu = 1` in the average-reward case.
pub fn state_distribution(m: &Mdp, pi: &Policy) -> Result<Vec<f64>> {
    pi.check_against(m)?;
    let n = m.n_states();
    let gamma = m.gamma();
    let p_t = policy_dm(m, pi).transpose();
    let mut a = DMatrix::<f64>::identity(n, n) - p_t * gamma;
    let mut b = DVector::from_iterator(n, m.initial_dist().iter().map(|d| (1.0 - gamma) * d));
    if m.is_average_reward() {
        // Flow equations are rank n-1; replace the last one by normalization.
        a.row_mut(n - 1).fill(1.0);
        b.fill(0.0);
        b[n - 1] = 1.0;
    }
    let mu = linalg::solve(a, b).ok_or_else(|| {
        Error::DegenerateChain(format!("flow system singular for policy {:?}", pi.actions()))
    })?;
    let total: f64 = mu.iter().sum();
    Ok(mu.iter().map(|x| x / total).collect())
}

/// `rho^pi` computed from the state distribution.
pub fn score(m: &Mdp, pi: &Policy) -> Result<f64> {
    let mu = state_distribution(m, pi)?;
    Ok(score_from(m, pi, &mu))
}

fn score_from(m: &Mdp, pi: &Policy, mu: &[f64]) -> f64 {
    mu.iter()
        .enumerate()
        .map(|(s, w)| w * m.reward(s, pi.action(s)))
        .sum()
}

/// Score, distribution and shifted Q/V values of `pi`.
pub fn evaluate_policy(m: &Mdp, pi: &Policy) -> Result<ValueBundle> {
    let n = m.n_states();
    let na = m.n_actions();
    let gamma = m.gamma();
    let mu = state_distribution(m, pi)?;
    let rho = score_from(m, pi, &mu);
    let p_pi = policy_dm(m, pi);
    let r_pi = DVector::from_vec(m.policy_rewards(pi));

    let (v, v_standard) = if m.is_average_reward() {
        // (I - P + 1 mu^T) V = R - rho 1 forces mu^T V = 0.
        let mu_row = DMatrix::from_fn(n, n, |_, j| mu[j]);
        let a = DMatrix::<f64>::identity(n, n) - &p_pi + mu_row;
        let b = r_pi.add_scalar(-rho);
        let v = linalg::solve(a, b)
            .ok_or_else(|| Error::DegenerateChain("bias system singular".into()))?;
        (v.as_slice().to_vec(), None)
    } else {
        let a = DMatrix::<f64>::identity(n, n) - p_pi * gamma;
        let v_std = linalg::solve(a, r_pi)
            .ok_or_else(|| Error::DegenerateChain("discounted value system singular".into()))?;
        let shift = rho / (1.0 - gamma);
        let v: Vec<f64> = v_std.iter().map(|x| x - shift).collect();
        (v, Some(v_std.as_slice().to_vec()))
    };

    let mut q = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let future: f64 = m.row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            q[s * na + a] = m.reward(s, a) - rho + gamma * future;
        }
    }
    let v_values = (0..n).map(|s| q[s * na + pi.action(s)]).collect();
    Ok(ValueBundle {
        score: rho,
        state_dist: mu,
        v_values,
        q_values: q,
        v_standard,
        n_actions: na,
    })
}

/// Discounted reach times from the recursion
/// `T(s, s') = sum_s'' P(s, pi(s), s'') (1 + gamma T(s'', s'))`, `T(s', s') = 0`.
pub fn reach_times(m: &Mdp, pi: &Policy) -> Result<ReachTimes> {
    pi.check_against(m)?;
    let n = m.n_states();
    let gamma = m.gamma();
    let p = m.policy_matrix(pi);
    let mut times = vec![0.0; n * n];
    for target in 0..n {
        if n == 1 {
            break;
        }
        let others: Vec<usize> = (0..n).filter(|&s| s != target).collect();
        let k = others.len();
        let a = DMatrix::from_fn(k, k, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - gamma * p[others[i] * n + others[j]]
        });
        let b = DVector::from_element(k, 1.0);
        let t = linalg::solve(a, b).ok_or(Error::UnreachableState(target))?;
        for (i, &s) in others.iter().enumerate() {
            times[s * n + target] = t[i];
        }
    }
    let diameter = times.iter().cloned().fold(0.0, f64::max);
    Ok(ReachTimes {
        times,
        diameter,
        n_states: n,
    })
}

/// `alpha = min over row pairs of sum_x min(P(s,a,x), P(s',a',x))`.
pub fn hajnal_alpha(m: &Mdp) -> f64 {
    let n = m.n_states();
    let rows: Vec<&[f64]> = (0..n)
        .flat_map(|s| (0..m.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| m.row(s, a))
        .collect();
    let mut alpha: f64 = 1.0;
    for (i, r1) in rows.iter().enumerate() {
        for r2 in &rows[i + 1..] {
            let overlap: f64 = r1.iter().zip(r2.iter()).map(|(x, y)| x.min(*y)).sum();
            alpha = alpha.min(overlap);
        }
    }
    alpha.clamp(0.0, 1.0)
}

/// Smallest score gap `rho^pi - rho^{pi<s;a>}` over all proper neighbors;
/// `+inf` when there are none.
pub fn robust_margin(m: &Mdp, pi: &Policy) -> Result<f64> {
    let base = score(m, pi)?;
    let mut margin = f64::INFINITY;
    for (_, _, nb) in pi.neighbors(m.n_actions()) {
        margin = margin.min(base - score(m, &nb)?);
    }
    Ok(margin)
}

/// Neighbor-based check: `rho^pi >= rho^{pi<s;a>} + eps` for every
/// state `s` and action `a != pi(s)`.
pub fn is_eps_robust_optimal(m: &Mdp, pi: &Policy, eps: f64) -> Result<bool> {
    Ok(robust_margin(m, pi)? >= eps)
}

/// Number of deterministic policies, or `None` on overflow.
pub fn policy_count(m: &Mdp) -> Option<u128> {
    (m.n_actions() as u128).checked_pow(u32::try_from(m.n_states()).ok()?)
}

/// Every deterministic policy in lexicographic order (state 0 most
/// significant).
pub fn enumerate_policies(m: &Mdp) -> Result<Vec<Policy>> {
    let count = policy_count(m).unwrap_or(u128::MAX);
    if count > ORACLE_POLICY_CAP {
        return Err(Error::OracleSizeLimit(count));
    }
    let n = m.n_states();
    let na = m.n_actions();
    let mut out = Vec::with_capacity(count as usize);
    let mut actions = vec![0usize; n];
    loop {
        out.push(Policy::new(actions.clone()));
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < na {
                break;
            }
            actions[i] = 0;
        }
    }
}

/// Direct check of `rho^pi >= rho^{pi'} + eps` against every other
/// deterministic policy.
pub fn brute_force_eps_robust(m: &Mdp, pi: &Policy, eps: f64) -> Result<bool> {
    pi.check_against(m)?;
    let policies = enumerate_policies(m)?;
    let base = score(m, pi)?;
    for other in policies.iter().filter(|p| *p != pi) {
        if base < score(m, other)? + eps {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Tolerance under which two Q-values count as tied during improvement.
const IMPROVEMENT_TOL: f64 = 1e-12;

/// Howard policy iteration on the score. Ties go to the lowest action index.
pub fn optimal_policy(m: &Mdp) -> Result<Policy> {
    let n = m.n_states();
    let na = m.n_actions();
    let cap = policy_count(m).map_or(usize::MAX, |c| usize::try_from(c).unwrap_or(usize::MAX));
    let mut pi = Policy::constant(n, 0);
    let mut iterations = 0usize;
    loop {
        let values = evaluate_policy(m, &pi)?;
        let improved = Policy::new(
            (0..n)
                .map(|s| {
                    let best = (0..na).map(|a| values.q(s, a)).fold(f64::NEG_INFINITY, f64::max);
                    let current = pi.action(s);
                    if values.q(s, current) >= best - IMPROVEMENT_TOL {
                        // Lowest-index action among the ties with the current one.
                        (0..na)
                            .find(|&a| (values.q(s, a) - values.q(s, current)).abs() <= IMPROVEMENT_TOL)
                            .unwrap()
                    } else {
                        (0..na).find(|&a| values.q(s, a) >= best - IMPROVEMENT_TOL).unwrap()
                    }
                })
                .collect(),
        );
        if improved == pi {
            return Ok(pi);
        }
        iterations += 1;
        if iterations > cap {
            return Err(Error::PolicyIterationStalled(iterations));
        }
        pi = improved;
    }
}

/// Both sides of `rho^pi - rho^{pi<s;a>} = mu^{pi<s;a>}(s) (V^pi(s) - Q^pi(s, a))`,
/// each computed independently.
pub fn score_gap_identity(m: &Mdp, pi: &Policy, s: usize, a: usize) -> Result<(f64, f64)> {
    if a == pi.action(s) {
        return Err(Error::InvalidPolicy(format!(
            "action {a} at state {s} is the policy's own action"
        )));
    }
    let nb = pi.neighbor(s, a);
    let values = evaluate_policy(m, pi)?;
    let lhs = values.score - evaluate_policy(m, &nb)?.score;
    let mu_nb = state_distribution(m, &nb)?;
    let rhs = mu_nb[s] * (values.v(s) - values.q(s, a));
    Ok((lhs, rhs))
}
